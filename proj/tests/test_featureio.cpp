#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "percept/feature_io.hpp"
#include "test_util.hpp"

using namespace percept;
using percept::testing::from_rows;
using percept::testing::random_sequence;
using percept::testing::TempDir;

TEST_CASE("fseq size arithmetic") {
  CHECK(encode_fseq(from_rows({{0.0f}})).size() == 24 + 4);
  const auto bytes = encode_fseq(from_rows({{1, 2}, {3, 4}, {5, 6}}));
  CHECK(bytes.size() - kFseqHeaderSize == 3 * 2 * 4);
}

TEST_CASE("fseq header layout") {
  const auto bytes = encode_fseq(from_rows({{1.0f, 2.0f, 3.0f}, {4.0f, 5.0f, 6.0f}}));
  CHECK(bytes[0] == 'F');
  CHECK(bytes[1] == 'S');
  CHECK(bytes[2] == 'E');
  CHECK(bytes[3] == 'Q');
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 3);
  for (std::size_t i = 16; i < 24; ++i) CHECK(bytes[i] == 0);
  // 1.0f little-endian
  CHECK(bytes[24] == 0x00);
  CHECK(bytes[27] == 0x3F);
  CHECK(bytes[26] == 0x80);
}

TEST_CASE("fseq round trip through files") {
  TempDir dir;
  const auto seq = random_sequence(50, 256, 7);
  save_fseq(seq, dir.path() / "a.fseq");
  const auto back = load_fseq(dir.path() / "a.fseq");
  CHECK(back.frames == seq.frames);
  CHECK(back.name == "a");
}

TEST_CASE("fseq round trip property") {
  std::mt19937_64 rng(3);
  for (int c = 0; c < 100; ++c) {
    const std::size_t T = 1 + rng() % 20;
    const std::size_t D = 1 + rng() % 9;
    const auto seq = random_sequence(T, D, rng());
    const auto back = decode_fseq(encode_fseq(seq));
    REQUIRE(back.frames == seq.frames);
  }
}

TEST_CASE("fseq rejects malformed input") {
  auto bytes = encode_fseq(from_rows({{1, 2, 3}, {4, 5, 6}}));
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    try {
      decode_fseq(bytes);
      FAIL("expected an error");
    } catch (const FseqError& e) {
      CHECK(e.code() == FseqErrc::bad_magic);
    }
  }
  SUBCASE("truncated payload") {
    bytes.resize(kFseqHeaderSize + 20);
    try {
      decode_fseq(bytes);
      FAIL("expected an error");
    } catch (const FseqError& e) {
      CHECK(e.code() == FseqErrc::truncated);
    }
  }
  SUBCASE("short header") {
    bytes.resize(10);
    CHECK_THROWS_AS(decode_fseq(bytes), FseqError);
  }
  SUBCASE("version") {
    bytes[4] = 2;
    try {
      decode_fseq(bytes);
      FAIL("expected an error");
    } catch (const FseqError& e) {
      CHECK(e.code() == FseqErrc::unsupported_version);
    }
  }
  SUBCASE("dtype") {
    bytes[6] = 1;
    try {
      decode_fseq(bytes);
      FAIL("expected an error");
    } catch (const FseqError& e) {
      CHECK(e.code() == FseqErrc::unsupported_dtype);
    }
  }
  SUBCASE("non-finite payload") {
    bytes[kFseqHeaderSize + 3] = 0x7F;
    bytes[kFseqHeaderSize + 2] = 0xC0;
    try {
      decode_fseq(bytes);
      FAIL("expected an error");
    } catch (const FseqError& e) {
      CHECK(e.code() == FseqErrc::non_finite);
    }
  }
}

TEST_CASE("missing fseq file is an io error") {
  try {
    load_fseq("/nonexistent/x.fseq");
    FAIL("expected an error");
  } catch (const FseqError& e) {
    CHECK(e.code() == FseqErrc::io);
  }
}

TEST_CASE("fit_norm examples") {
  SUBCASE("two-point population std") {
    const std::vector<FeatureSequence> pool{from_rows({{1}, {3}})};
    const auto s = fit_norm(pool);
    CHECK(s.mean[0] == 2.0);
    CHECK(s.std[0] == 1.0);
  }
  SUBCASE("constant column clamps to the floor") {
    const std::vector<FeatureSequence> pool{from_rows({{5}, {5}, {5}})};
    CHECK(fit_norm(pool, 1e-3).std[0] == 1e-3);
  }
  SUBCASE("pooled over sequences") {
    const std::vector<FeatureSequence> pool{from_rows({{0}, {0}}), from_rows({{4}, {4}})};
    const auto s = fit_norm(pool);
    CHECK(s.mean[0] == 2.0);
    CHECK(s.std[0] == 2.0);
  }
  SUBCASE("mismatched dims") {
    const std::vector<FeatureSequence> pool{from_rows({{0}}), from_rows({{0, 1}})};
    CHECK_THROWS(fit_norm(pool));
  }
}

TEST_CASE("apply_norm examples") {
  NormStats s{{2.0}, {2.0}};
  CHECK(apply_norm(from_rows({{4}}), s).frames(0, 0) == doctest::Approx(1.0));

  // Applying twice is not applying once.
  const auto once = apply_norm(from_rows({{4}}), s);
  const auto twice = apply_norm(once, s);
  CHECK(once.frames(0, 0) != twice.frames(0, 0));
}

TEST_CASE("normalized pool has zero mean and unit std") {
  std::vector<FeatureSequence> pool{random_sequence(30, 6, 1), random_sequence(17, 6, 2), random_sequence(5, 6, 3)};
  const auto stats = fit_norm(pool);
  std::vector<FeatureSequence> normed;
  for (const auto& s : pool) normed.push_back(apply_norm(s, stats));
  const auto again = fit_norm(normed);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(again.mean[i]) < 1e-6);
    CHECK(std::abs(again.std[i] - 1.0) < 1e-6);
  }
}

TEST_CASE("z-scoring absorbs positive affine rescaling") {
  std::vector<FeatureSequence> pool{random_sequence(20, 4, 11), random_sequence(20, 4, 12)};
  const std::vector<float> a{2.0f, 0.5f, 10.0f, 1.0f};
  const std::vector<float> b{-3.0f, 1.0f, 0.25f, 100.0f};
  std::vector<FeatureSequence> scaled = pool;
  for (auto& s : scaled)
    for (std::size_t t = 0; t < s.length(); ++t)
      for (std::size_t i = 0; i < 4; ++i) s.frames(t, i) = a[i] * s.frames(t, i) + b[i];
  const auto s1 = fit_norm(pool);
  const auto s2 = fit_norm(scaled);
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const auto x = apply_norm(pool[k], s1);
    const auto y = apply_norm(scaled[k], s2);
    for (std::size_t t = 0; t < x.length(); ++t)
      for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(x.frames(t, i) - y.frames(t, i)) < 1e-5);
  }
}

TEST_CASE("annotation validation and segments") {
  StepAnnotation a{3, {2, 5}};
  CHECK_NOTHROW(validate(a, 8));
  CHECK(a.segment(0, 8) == std::pair<std::size_t, std::size_t>{0, 2});
  CHECK(a.segment(2, 8) == std::pair<std::size_t, std::size_t>{5, 8});
  CHECK(a.frame_labels(8) == std::vector<int>{0, 0, 1, 1, 1, 2, 2, 2});
  CHECK_THROWS(validate(StepAnnotation{3, {5, 2}}, 8));
  CHECK_THROWS(validate(StepAnnotation{3, {2, 8}}, 8));
  CHECK_THROWS(validate(StepAnnotation{2, {2, 5}}, 8));
  CHECK_THROWS(validate(StepAnnotation{2, {0}}, 8));
}

TEST_CASE("manifest round trip resolves relative paths") {
  TempDir dir;
  const auto seq = random_sequence(6, 3, 4);
  save_fseq(seq, dir.path() / "s.fseq");
  save_annotation(StepAnnotation{2, {3}}, dir.path() / "s.json");
  save_fseq(random_sequence(6, 3, 5), dir.path() / "u.fseq");
  DatasetManifest m;
  m.entries.push_back({"s.fseq", std::filesystem::path("s.json"), Split::train});
  m.entries.push_back({"u.fseq", std::nullopt, Split::test});
  save_manifest(m, dir.path() / "manifest.json");

  std::ifstream in(dir.path() / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  REQUIRE(j.is_array());
  CHECK(j[0]["split"] == "train");
  CHECK(j[1]["labels"].is_null());

  const auto data = load_dataset(load_manifest(dir.path() / "manifest.json"));
  REQUIRE(data.size() == 2);
  CHECK(data[0].seq.frames == seq.frames);
  CHECK(data[0].labels->boundaries == std::vector<std::size_t>{3});
  CHECK_FALSE(data[1].labels.has_value());
  CHECK(data[1].split == Split::test);
}

TEST_CASE("dataset loading errors name the problem") {
  TempDir dir;
  save_fseq(random_sequence(6, 3, 4), dir.path() / "a.fseq");
  save_fseq(random_sequence(6, 2, 4), dir.path() / "b.fseq");
  DatasetManifest m;
  m.entries.push_back({dir.path() / "a.fseq", std::nullopt, Split::train});
  m.entries.push_back({dir.path() / "b.fseq", std::nullopt, Split::train});
  CHECK_THROWS_AS(load_dataset(m), DataError);

  m.entries.pop_back();
  m.entries.push_back({dir.path() / "missing.fseq", std::nullopt, Split::train});
  try {
    load_dataset(m);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("missing.fseq") != std::string::npos);
  }
}
