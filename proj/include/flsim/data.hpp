#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flsim/matrix.hpp"
#include "flsim/nn.hpp"
#include "flsim/rng.hpp"

namespace flsim::data {

struct Dataset {
    Matrix features;          // n x dim, values in [0, 1]
    std::vector<int> labels;  // n class indices
    int n_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    Dataset subset(std::span<const std::size_t> indices) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Reads an IDX image file (magic 2051) and label file (magic 2049). Pixels are
/// scaled by 1/255. Throws IngestError with the failing byte offset.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
/// Same decoding from in-memory buffers.
Dataset decode_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// Gaussian blobs: one mean per class drawn uniformly in [0,1]^dim, samples
/// mean + N(0, spread^2) per coordinate, clamped to [0, 1]. Samples are
/// interleaved by class (0, 1, ..., n-1, 0, 1, ...).
Dataset synth_dataset(int n_classes, std::size_t dim, std::size_t n_per_class, double spread, std::uint64_t seed);

struct Split {
    Dataset train;
    Dataset test;
};

/// Shuffles with `seed` and moves the first round(fraction * n) samples to test.
Split holdout_split(const Dataset& dataset, double test_fraction, std::uint64_t seed);

/// Uniform sample of n rows without replacement (with replacement when n > size).
Dataset sample_rows(const Dataset& dataset, std::size_t n, Rng& rng);

struct PartitionConfig {
    std::size_t n_clients = 1;
    double q = 1.0;
    std::uint64_t seed = 0;
};

/// Group index of every client: n_groups contiguous blocks of N / n_groups
/// clients, remainder clients joining the last block.
std::vector<std::size_t> client_groups(std::size_t n_clients, std::size_t n_groups);

/// Non-IID split: a sample with label K goes to group K with probability q,
/// otherwise to one of the other groups uniformly; then to a uniformly chosen
/// client of that group. q = 1/n gives IID clients.
std::vector<Dataset> partition(const Dataset& dataset, const PartitionConfig& cfg);

/// Label c becomes n_classes - 1 - c.
Dataset static_label_flip(Dataset dataset);

/// Each label becomes the surrogate's least probable class for that sample
/// (lowest index on ties).
Dataset dynamic_label_flip(Dataset dataset, const nn::Model& surrogate);

}  // namespace flsim::data
