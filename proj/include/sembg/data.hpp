#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sembg/tensor.hpp"

namespace sembg {

struct Dataset {
  Tensor images;            // [S, C, H, W]
  std::vector<int> labels;  // [S], each in [0, num_classes)
  int num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices, std::string split_name) const;
};

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

// Per-channel mean/std, computed on the training split only.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

Normalization channel_statistics(const Tensor& images);
void normalize(Tensor& images, const Normalization& norm);

// ---------------------------------------------------------------------------
// CIFAR binary batches. Records are <label><3072 RGB bytes> (CIFAR-10) or
// <coarse><fine><3072 bytes> (CIFAR-100, fine label used).

enum class CifarFormat { cifar10, cifar100 };

// Raw records scaled to [0, 1], not standardized.
Dataset read_cifar_file(const std::filesystem::path& file, CifarFormat format);

struct DatasetPair {
  Dataset train;
  Dataset test;
  Normalization norm;
};

// Expects data_batch_{1..5}.bin and test_batch.bin.
DatasetPair load_cifar10(const std::filesystem::path& dir);
// Expects train.bin and test.bin.
DatasetPair load_cifar100(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic desk-scale task: class m is a bright square patch at a
// class-specific position, plus Gaussian pixel noise.

struct BlobsConfig {
  int classes = 4;
  int per_class = 500;
  int image_hw = 16;
  int channels = 3;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

Tensor blob_template(const BlobsConfig& cfg, int label);
Dataset synthetic_blobs(const BlobsConfig& cfg);

// Seeded split: `fraction` of the samples go to the second set.
std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Augmentation and batching.

// Crop offset into the zero-padded image and flip decision for one sample.
struct AugmentDraw {
  int offset_y = 0;
  int offset_x = 0;
  bool flip = false;
};

Tensor augment_with(const Tensor& batch, int pad, std::span<const AugmentDraw> draws);
// Zero-pad by `pad`, random crop back to size, horizontal flip with p=0.5.
Tensor augment(const Tensor& batch, int pad, bool hflip, std::mt19937_64& rng);

// Deterministic seed for (base seed, epoch).
std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch);
std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed, int epoch);
// Shuffled index batches; the last short batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, int epoch);

// ---------------------------------------------------------------------------
// Debug container: magic "SEMBGDS1", u32 num_classes, u64 rank, u64 extents,
// i32 labels, f32 pixels; all little-endian.

void export_dataset(const Dataset& data, const std::filesystem::path& file);
Dataset import_dataset(const std::filesystem::path& file);

}  // namespace sembg
