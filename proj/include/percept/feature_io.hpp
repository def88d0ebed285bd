#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "percept/error.hpp"

namespace percept {

/// Dense frame-major matrix of single-precision activations. Row t holds all
/// features of frame t contiguously.
class FrameMatrix {
public:
  FrameMatrix() = default;
  FrameMatrix(std::size_t frames, std::size_t dims, float fill = 0.0f);
  FrameMatrix(std::size_t frames, std::size_t dims, std::vector<float> values);

  std::size_t frames() const noexcept { return frames_; }
  std::size_t dims() const noexcept { return dims_; }
  bool empty() const noexcept { return values_.empty(); }

  float operator()(std::size_t t, std::size_t i) const { return values_[t * dims_ + i]; }
  float& operator()(std::size_t t, std::size_t i) { return values_[t * dims_ + i]; }

  std::span<const float> row(std::size_t t) const {
    return {values_.data() + t * dims_, dims_};
  }
  std::span<float> row(std::size_t t) { return {values_.data() + t * dims_, dims_}; }

  const std::vector<float>& values() const noexcept { return values_; }

  friend bool operator==(const FrameMatrix&, const FrameMatrix&) = default;

private:
  std::size_t frames_ = 0;
  std::size_t dims_ = 0;
  std::vector<float> values_;
};

enum class SequenceSource { extracted, synthetic };

/// A demonstration as a trajectory of per-frame feature activations.
struct FeatureSequence {
  FrameMatrix frames;
  std::string name;
  SequenceSource source = SequenceSource::synthetic;
  std::optional<double> frame_rate_hz;

  std::size_t length() const noexcept { return frames.frames(); }
  std::size_t dims() const noexcept { return frames.dims(); }
};

/// Throws std::invalid_argument when the sequence is empty or holds NaN/Inf.
void validate(const FeatureSequence& seq);

/// Ground-truth step boundaries. Step g (0-based) covers frames
/// [boundaries[g-1], boundaries[g]) with an implicit 0 in front and T at the end.
struct StepAnnotation {
  int n_steps = 1;
  std::vector<std::size_t> boundaries;

  /// Half-open frame range of step `step` for a sequence of `frames` frames.
  std::pair<std::size_t, std::size_t> segment(int step, std::size_t frames) const;
  /// Step index of every frame.
  std::vector<int> frame_labels(std::size_t frames) const;

  friend bool operator==(const StepAnnotation&, const StepAnnotation&) = default;
};

/// Throws std::invalid_argument unless the annotation partitions [0, frames)
/// into n_steps non-empty segments.
void validate(const StepAnnotation& labels, std::size_t frames);

/// Global per-feature normalization statistics.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t dims() const noexcept { return mean.size(); }
};

inline constexpr double kDefaultStdFloor = 1e-6;

/// Pooled per-feature mean and population standard deviation over every frame
/// of every training sequence, with std clamped below at `std_floor`.
NormStats fit_norm(std::span<const FeatureSequence> train, double std_floor = kDefaultStdFloor);

/// out[t][i] = (in[t][i] - mean[i]) / std[i].
FeatureSequence apply_norm(const FeatureSequence& seq, const NormStats& stats);

// FSEQ binary format, little-endian:
//   0..3 magic "FSEQ", 4..5 version u16 = 1, 6 dtype u8 = 0 (binary32),
//   7 reserved, 8..11 T u32, 12..15 D u32, 16..23 reserved, then T*D floats.
inline constexpr std::size_t kFseqHeaderSize = 24;
inline constexpr std::uint16_t kFseqVersion = 1;

std::vector<unsigned char> encode_fseq(const FeatureSequence& seq);
/// `name` becomes the decoded sequence's name (the format stores no metadata).
FeatureSequence decode_fseq(std::span<const unsigned char> bytes, std::string name = {});

void save_fseq(const FeatureSequence& seq, const std::filesystem::path& path);
/// Throws FseqError with a distinct code for each failure mode.
FeatureSequence load_fseq(const std::filesystem::path& path);

StepAnnotation load_annotation(const std::filesystem::path& path);
void save_annotation(const StepAnnotation& labels, const std::filesystem::path& path);

enum class Split { train, test };

const char* to_string(Split split);

struct ManifestEntry {
  std::filesystem::path fseq;
  std::optional<std::filesystem::path> labels;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

/// Relative paths in the file are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Paths are written as given.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct LabeledSequence {
  FeatureSequence seq;
  std::optional<StepAnnotation> labels;
  Split split = Split::train;
};

/// Loads every entry, checking shared dimensionality and label validity.
std::vector<LabeledSequence> load_dataset(const DatasetManifest& manifest);

}  // namespace percept
