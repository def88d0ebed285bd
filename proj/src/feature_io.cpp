#include "percept/feature_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace percept {

const char* to_string(FseqErrc code) {
  switch (code) {
    case FseqErrc::io: return "io error";
    case FseqErrc::bad_magic: return "bad magic";
    case FseqErrc::unsupported_version: return "unsupported version";
    case FseqErrc::unsupported_dtype: return "unsupported dtype";
    case FseqErrc::truncated: return "truncated payload";
    case FseqErrc::non_finite: return "non-finite payload";
  }
  return "unknown";
}

const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

FrameMatrix::FrameMatrix(std::size_t frames, std::size_t dims, float fill)
    : frames_(frames), dims_(dims), values_(frames * dims, fill) {}

FrameMatrix::FrameMatrix(std::size_t frames, std::size_t dims, std::vector<float> values)
    : frames_(frames), dims_(dims), values_(std::move(values)) {
  if (values_.size() != frames_ * dims_)
    throw std::invalid_argument("FrameMatrix: value count does not match shape");
}

void validate(const FeatureSequence& seq) {
  if (seq.length() == 0 || seq.dims() == 0)
    throw std::invalid_argument("feature sequence must have T >= 1 and D >= 1");
  const auto& v = seq.frames.values();
  if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); }))
    throw std::invalid_argument("feature sequence '" + seq.name + "' holds non-finite values");
  if (seq.frame_rate_hz && !(*seq.frame_rate_hz > 0.0))
    throw std::invalid_argument("frame rate must be positive");
}

std::pair<std::size_t, std::size_t> StepAnnotation::segment(int step, std::size_t frames) const {
  if (step < 0 || step >= n_steps) throw std::out_of_range("step index out of range");
  const auto g = static_cast<std::size_t>(step);
  const std::size_t begin = g == 0 ? 0 : boundaries[g - 1];
  const std::size_t end = g + 1 == static_cast<std::size_t>(n_steps) ? frames : boundaries[g];
  return {begin, end};
}

std::vector<int> StepAnnotation::frame_labels(std::size_t frames) const {
  std::vector<int> labels(frames, 0);
  for (int g = 0; g < n_steps; ++g) {
    const auto [b, e] = segment(g, frames);
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(b),
              labels.begin() + static_cast<std::ptrdiff_t>(e), g);
  }
  return labels;
}

void validate(const StepAnnotation& labels, std::size_t frames) {
  if (labels.n_steps < 1) throw std::invalid_argument("annotation needs n_steps >= 1");
  if (labels.boundaries.size() + 1 != static_cast<std::size_t>(labels.n_steps))
    throw std::invalid_argument("annotation needs exactly n_steps - 1 boundaries");
  std::size_t prev = 0;
  for (const auto b : labels.boundaries) {
    if (b <= prev || b >= frames)
      throw std::invalid_argument("annotation boundaries must be strictly increasing in [1, T-1]");
    prev = b;
  }
}

NormStats fit_norm(std::span<const FeatureSequence> train, double std_floor) {
  if (train.empty()) throw std::invalid_argument("fit_norm: no training sequences");
  if (!(std_floor > 0.0)) throw std::invalid_argument("fit_norm: std_floor must be positive");
  const std::size_t dims = train.front().dims();
  std::vector<double> sum(dims, 0.0);
  std::size_t count = 0;
  for (const auto& seq : train) {
    if (seq.dims() != dims) throw std::invalid_argument("fit_norm: mismatched feature dimension");
    for (std::size_t t = 0; t < seq.length(); ++t) {
      const auto row = seq.frames.row(t);
      for (std::size_t i = 0; i < dims; ++i) sum[i] += row[i];
    }
    count += seq.length();
  }
  if (count == 0) throw std::invalid_argument("fit_norm: no frames");

  NormStats stats;
  stats.mean.resize(dims);
  for (std::size_t i = 0; i < dims; ++i) stats.mean[i] = sum[i] / static_cast<double>(count);

  // Second pass on centered values; the one-pass formula cancels badly.
  std::vector<double> sq(dims, 0.0);
  for (const auto& seq : train) {
    for (std::size_t t = 0; t < seq.length(); ++t) {
      const auto row = seq.frames.row(t);
      for (std::size_t i = 0; i < dims; ++i) {
        const double d = row[i] - stats.mean[i];
        sq[i] += d * d;
      }
    }
  }
  stats.std.resize(dims);
  for (std::size_t i = 0; i < dims; ++i)
    stats.std[i] = std::max(std::sqrt(sq[i] / static_cast<double>(count)), std_floor);
  return stats;
}

FeatureSequence apply_norm(const FeatureSequence& seq, const NormStats& stats) {
  if (seq.dims() != stats.dims()) throw std::invalid_argument("apply_norm: dimension mismatch");
  FeatureSequence out = seq;
  for (std::size_t t = 0; t < seq.length(); ++t) {
    auto row = out.frames.row(t);
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = static_cast<float>((row[i] - stats.mean[i]) / stats.std[i]);
  }
  return out;
}

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<unsigned char>((value >> (8 * b)) & 0xFF));
}

template <typename U>
U get_le(std::span<const unsigned char> in, std::size_t offset) {
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b)
    value |= static_cast<U>(static_cast<U>(in[offset + b]) << (8 * b));
  return value;
}

}  // namespace

std::vector<unsigned char> encode_fseq(const FeatureSequence& seq) {
  validate(seq);
  if (seq.length() > 0xFFFFFFFFu || seq.dims() > 0xFFFFFFFFu)
    throw std::invalid_argument("sequence too large for FSEQ");
  const std::size_t count = seq.length() * seq.dims();
  std::vector<unsigned char> out;
  out.reserve(kFseqHeaderSize + 4 * count);
  for (const char c : {'F', 'S', 'E', 'Q'}) out.push_back(static_cast<unsigned char>(c));
  put_le<std::uint16_t>(out, kFseqVersion);
  out.push_back(0);  // dtype: binary32
  out.push_back(0);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.length()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.dims()));
  out.resize(kFseqHeaderSize, 0);
  for (const float v : seq.frames.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureSequence decode_fseq(std::span<const unsigned char> bytes, std::string name) {
  if (bytes.size() < kFseqHeaderSize)
    throw FseqError(FseqErrc::truncated, "file shorter than the 24-byte header");
  if (std::memcmp(bytes.data(), "FSEQ", 4) != 0)
    throw FseqError(FseqErrc::bad_magic, "expected \"FSEQ\"");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kFseqVersion)
    throw FseqError(FseqErrc::unsupported_version, "version " + std::to_string(version));
  if (bytes[6] != 0)
    throw FseqError(FseqErrc::unsupported_dtype, "dtype " + std::to_string(bytes[6]));
  const std::size_t frames = get_le<std::uint32_t>(bytes, 8);
  const std::size_t dims = get_le<std::uint32_t>(bytes, 12);
  if (frames == 0 || dims == 0)
    throw FseqError(FseqErrc::truncated, "header declares an empty matrix");
  const std::size_t count = frames * dims;
  if (bytes.size() - kFseqHeaderSize < 4 * count)
    throw FseqError(FseqErrc::truncated, std::to_string(4 * count) + " payload bytes required, " +
                                             std::to_string(bytes.size() - kFseqHeaderSize) +
                                             " present");
  std::vector<float> values(count);
  for (std::size_t k = 0; k < count; ++k) {
    values[k] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, kFseqHeaderSize + 4 * k));
    if (!std::isfinite(values[k]))
      throw FseqError(FseqErrc::non_finite, "value " + std::to_string(k) + " is NaN or Inf");
  }
  FeatureSequence seq;
  seq.frames = FrameMatrix(frames, dims, std::move(values));
  seq.name = std::move(name);
  seq.source = SequenceSource::extracted;
  return seq;
}

void save_fseq(const FeatureSequence& seq, const std::filesystem::path& path) {
  const auto bytes = encode_fseq(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FseqError(FseqErrc::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FseqError(FseqErrc::io, "write failed for " + path.string());
}

FeatureSequence load_fseq(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FseqError(FseqErrc::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_fseq(bytes, path.stem().string());
}

StepAnnotation load_annotation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    StepAnnotation labels;
    labels.n_steps = j.at("n_steps").get<int>();
    labels.boundaries = j.at("boundaries").get<std::vector<std::size_t>>();
    return labels;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed annotation " + path.string() + ": " + e.what());
  }
}

void save_annotation(const StepAnnotation& labels, const std::filesystem::path& path) {
  nlohmann::json j = {{"n_steps", labels.n_steps}, {"boundaries", labels.boundaries}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write annotation " + path.string());
  out << j.dump() << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  DatasetManifest manifest;
  try {
    const auto j = nlohmann::json::parse(in);
    if (!j.is_array()) throw DataError("manifest " + path.string() + " must be a JSON list");
    for (const auto& e : j) {
      ManifestEntry entry;
      entry.fseq = resolve(e.at("fseq").get<std::string>());
      if (e.contains("labels") && !e.at("labels").is_null())
        entry.labels = resolve(e.at("labels").get<std::string>());
      const auto split = e.at("split").get<std::string>();
      if (split == "train") entry.split = Split::train;
      else if (split == "test") entry.split = Split::test;
      else throw DataError("manifest entry has unknown split '" + split + "'");
      manifest.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  auto j = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    j.push_back({{"fseq", e.fseq.generic_string()},
                 {"labels", e.labels ? nlohmann::json(e.labels->generic_string()) : nlohmann::json()},
                 {"split", to_string(e.split)}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<LabeledSequence> load_dataset(const DatasetManifest& manifest) {
  std::vector<LabeledSequence> out;
  out.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    if (!std::filesystem::exists(entry.fseq))
      throw DataError("missing sequence file " + entry.fseq.string());
    LabeledSequence item;
    item.seq = load_fseq(entry.fseq);
    item.split = entry.split;
    if (!out.empty() && item.seq.dims() != out.front().seq.dims())
      throw DataError("sequence " + entry.fseq.string() + " has a different feature dimension");
    if (entry.labels) {
      if (!std::filesystem::exists(*entry.labels))
        throw DataError("missing annotation file " + entry.labels->string());
      item.labels = load_annotation(*entry.labels);
      try {
        validate(*item.labels, item.seq.length());
      } catch (const std::invalid_argument& e) {
        throw DataError(entry.labels->string() + ": " + e.what());
      }
    }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace percept
