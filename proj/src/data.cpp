#include "flsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

namespace flsim::data {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.features = features.select_rows(indices);
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        out.labels.push_back(labels[i]);
    }
    out.n_classes = n_classes;
    return out;
}

namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic = 0x00000803;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
    if (offset + 4 > bytes.size()) {
        throw IngestError(std::string("truncated IDX header reading ") + what, bytes.size());
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IngestError("cannot open " + path.string(), 0);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset decode_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
    const std::uint32_t image_magic = read_be32(images, 0, "image magic");
    if (image_magic != kImageMagic) {
        throw IngestError("bad image magic " + std::to_string(image_magic) + " (expected 2051)", 0);
    }
    const std::uint32_t count = read_be32(images, 4, "image count");
    const std::uint32_t rows = read_be32(images, 8, "image rows");
    const std::uint32_t cols = read_be32(images, 12, "image cols");
    const std::size_t dim = std::size_t{rows} * cols;
    const std::size_t header = 16;
    if (images.size() < header + std::size_t{count} * dim) {
        throw IngestError("truncated image payload: expected " + std::to_string(count) + " images of " +
                              std::to_string(dim) + " bytes",
                          images.size());
    }

    const std::uint32_t label_magic = read_be32(labels, 0, "label magic");
    if (label_magic != kLabelMagic) {
        throw IngestError("bad label magic " + std::to_string(label_magic) + " (expected 2049)", 0);
    }
    const std::uint32_t label_count = read_be32(labels, 4, "label count");
    if (label_count != count) {
        throw IngestError("label count " + std::to_string(label_count) + " does not match image count " +
                              std::to_string(count),
                          4);
    }
    if (labels.size() < 8 + std::size_t{count}) {
        throw IngestError("truncated label payload", labels.size());
    }

    Dataset out;
    out.features = Matrix(count, dim);
    for (std::size_t i = 0; i < std::size_t{count} * dim; ++i) {
        out.features.data()[i] = static_cast<double>(images[header + i]) / 255.0;
    }
    out.labels.resize(count);
    int max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        out.labels[i] = labels[8 + i];
        max_label = std::max(max_label, out.labels[i]);
    }
    out.n_classes = std::max(max_label + 1, 2);
    return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);
    return decode_idx(images, labels);
}

Dataset synth_dataset(int n_classes, std::size_t dim, std::size_t n_per_class, double spread, std::uint64_t seed) {
    if (n_classes < 2) {
        throw ConfigError("synthetic dataset needs at least 2 classes");
    }
    if (spread < 0.0) {
        throw ConfigError("synthetic dataset spread must be >= 0");
    }
    Rng mean_rng = Rng::derive(seed, "synth-means");
    Rng sample_rng = Rng::derive(seed, "synth-samples");
    const auto classes = static_cast<std::size_t>(n_classes);
    Matrix means(classes, dim);
    for (double& m : means.values()) {
        m = mean_rng.uniform();
    }
    Dataset out;
    out.n_classes = n_classes;
    out.features = Matrix(classes * n_per_class, dim);
    out.labels.resize(classes * n_per_class);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n_per_class; ++i) {
        for (std::size_t c = 0; c < classes; ++c, ++r) {
            for (std::size_t j = 0; j < dim; ++j) {
                const double x = means(c, j) + spread * sample_rng.normal();
                out.features(r, j) = std::clamp(x, 0.0, 1.0);
            }
            out.labels[r] = static_cast<int>(c);
        }
    }
    return out;
}

Split holdout_split(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw ConfigError("test fraction must be in [0, 1)");
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(seed, "holdout");
    rng.shuffle(std::span(order));
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {dataset.subset(train), dataset.subset(test)};
}

Dataset sample_rows(const Dataset& dataset, std::size_t n, Rng& rng) {
    std::vector<std::size_t> picks;
    if (n <= dataset.size()) {
        picks = rng.sample_without_replacement(dataset.size(), n);
    } else {
        picks.resize(n);
        for (auto& p : picks) {
            p = rng.below(dataset.size());
        }
    }
    return dataset.subset(picks);
}

std::vector<std::size_t> client_groups(std::size_t n_clients, std::size_t n_groups) {
    if (n_groups == 0 || n_clients < n_groups) {
        throw ConfigError("cannot divide " + std::to_string(n_clients) + " clients into " + std::to_string(n_groups) +
                          " groups");
    }
    const std::size_t per_group = n_clients / n_groups;
    std::vector<std::size_t> groups(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
        groups[c] = std::min(c / per_group, n_groups - 1);
    }
    return groups;
}

std::vector<Dataset> partition(const Dataset& dataset, const PartitionConfig& cfg) {
    const auto n_groups = static_cast<std::size_t>(dataset.n_classes);
    if (!(cfg.q > 0.0 && cfg.q <= 1.0)) {
        throw ConfigError("partition q must be in (0, 1]");
    }
    if (cfg.n_clients < n_groups) {
        throw ConfigError("partition: N = " + std::to_string(cfg.n_clients) + " is smaller than the " +
                          std::to_string(n_groups) + " label groups");
    }
    const auto groups = client_groups(cfg.n_clients, n_groups);
    std::vector<std::vector<std::size_t>> members(n_groups);
    for (std::size_t c = 0; c < cfg.n_clients; ++c) {
        members[groups[c]].push_back(c);
    }

    Rng rng = Rng::derive(cfg.seed, "partition");
    std::vector<std::vector<std::size_t>> assigned(cfg.n_clients);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto label = static_cast<std::size_t>(dataset.labels[i]);
        std::size_t group = label;
        if (rng.uniform() >= cfg.q && n_groups > 1) {
            // uniform over the other n - 1 groups
            group = rng.below(n_groups - 1);
            if (group >= label) {
                ++group;
            }
        }
        const auto& clients = members[group];
        assigned[clients[rng.below(clients.size())]].push_back(i);
    }

    std::vector<Dataset> out;
    out.reserve(cfg.n_clients);
    for (const auto& idx : assigned) {
        out.push_back(dataset.subset(idx));
        if (idx.empty()) {
            out.back().features = Matrix(0, dataset.features.cols());
        }
    }
    return out;
}

Dataset static_label_flip(Dataset dataset) {
    for (int& y : dataset.labels) {
        y = dataset.n_classes - 1 - y;
    }
    return dataset;
}

Dataset dynamic_label_flip(Dataset dataset, const nn::Model& surrogate) {
    if (static_cast<int>(surrogate.output_dim()) != dataset.n_classes) {
        throw ConfigError("surrogate output width does not match the number of classes");
    }
    Matrix probs = nn::forward(surrogate, dataset.features);
    if (surrogate.layers.back().activation != nn::Activation::softmax_out) {
        probs = nn::softmax_rows(probs);
    }
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        auto row = probs.row(r);
        dataset.labels[r] = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
    }
    return dataset;
}

}  // namespace flsim::data
