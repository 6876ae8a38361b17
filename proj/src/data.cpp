#include "fedbary/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fedbary/common.hpp"

namespace fedbary {

void LabeledDataset::validate() const {
    if (features.size() != labels.size())
        throw std::invalid_argument("dataset: feature/label count mismatch");
    if (num_classes <= 0)
        throw std::invalid_argument("dataset: non-positive class count");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::invalid_argument("dataset: label out of range at index " +
                                        std::to_string(i));
        if (features[i].size() != feature_dim())
            throw std::invalid_argument("dataset: ragged feature vectors");
        for (double x : features[i])
            if (!std::isfinite(x))
                throw std::invalid_argument("dataset: non-finite feature");
    }
}

LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& indices) {
    LabeledDataset out;
    out.num_classes = ds.num_classes;
    out.features.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= ds.size())
            throw std::out_of_range("subset: index out of range");
        out.features.push_back(ds.features[i]);
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

namespace {

std::vector<double> draw_dirichlet(std::mt19937_64& eng, std::size_t n, double alpha) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> g(n);
    double total = 0.0;
    for (double& x : g) {
        x = gamma(eng);
        total += x;
    }
    if (total <= 0.0) {
        // All-zero draw (possible for tiny alpha); fall back to uniform.
        std::fill(g.begin(), g.end(), 1.0 / static_cast<double>(n));
        return g;
    }
    for (double& x : g) x /= total;
    return g;
}

/// Largest-remainder split of `count` items into shares `props`.
std::vector<std::size_t> largest_remainder_counts(const std::vector<double>& props,
                                                  std::size_t count) {
    const std::size_t n = props.size();
    std::vector<std::size_t> counts(n);
    std::vector<std::pair<double, std::size_t>> remainders(n);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double exact = props[k] * static_cast<double>(count);
        counts[k] = static_cast<std::size_t>(std::floor(exact));
        remainders[k] = {exact - std::floor(exact), k};
        assigned += counts[k];
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;  // deterministic tie-break
    });
    for (std::size_t j = 0; assigned < count; ++j, ++assigned)
        ++counts[remainders[j % n].second];
    return counts;
}

}  // namespace

PartitionPlan dirichlet_partition(const std::vector<int>& labels, std::size_t n_clients,
                                  double alpha, std::uint64_t seed) {
    if (n_clients < 1)
        throw std::invalid_argument("dirichlet_partition: need at least one client");
    if (!(alpha > 0.0))
        throw std::invalid_argument("dirichlet_partition: alpha must be positive");
    if (labels.size() < n_clients)
        throw std::invalid_argument("dirichlet_partition: fewer samples than clients");

    int n_classes = 0;
    for (int l : labels) n_classes = std::max(n_classes, l + 1);
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(i);

    std::mt19937_64 eng(derive_seed(seed, "partition"));
    std::vector<std::vector<std::size_t>> assignments;
    for (int attempt = 0; attempt < 100; ++attempt) {
        assignments.assign(n_clients, {});
        for (const auto& cls : by_class) {
            if (cls.empty()) continue;
            const auto props = draw_dirichlet(eng, n_clients, alpha);
            const auto counts = largest_remainder_counts(props, cls.size());
            std::size_t pos = 0;
            for (std::size_t k = 0; k < n_clients; ++k) {
                assignments[k].insert(assignments[k].end(), cls.begin() + pos,
                                      cls.begin() + pos + counts[k]);
                pos += counts[k];
            }
        }
        if (std::none_of(assignments.begin(), assignments.end(),
                         [](const auto& a) { return a.empty(); }))
            break;
    }
    // Repair any client still empty: move one sample from the largest client.
    for (auto& a : assignments) {
        if (!a.empty()) continue;
        auto largest = std::max_element(
            assignments.begin(), assignments.end(),
            [](const auto& x, const auto& y) { return x.size() < y.size(); });
        a.push_back(largest->back());
        largest->pop_back();
    }
    for (auto& a : assignments) std::sort(a.begin(), a.end());

    PartitionPlan plan;
    plan.assignments = std::move(assignments);
    plan.alpha = alpha;
    plan.seed = seed;
    return plan;
}

namespace {

std::uint32_t read_be_u32(std::istream& is, const std::filesystem::path& path,
                          std::streamoff offset) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx: truncated read at byte " + std::to_string(offset) +
                                 " in " + path.string());
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("idx: cannot open " + images_path.string());
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw std::runtime_error("idx: cannot open " + labels_path.string());

    if (read_be_u32(imgs, images_path, 0) != 0x00000803u)
        throw std::runtime_error("idx: bad image magic at byte 0 in " + images_path.string());
    const std::uint32_t n_images = read_be_u32(imgs, images_path, 4);
    const std::uint32_t rows = read_be_u32(imgs, images_path, 8);
    const std::uint32_t cols = read_be_u32(imgs, images_path, 12);

    if (read_be_u32(labs, labels_path, 0) != 0x00000801u)
        throw std::runtime_error("idx: bad label magic at byte 0 in " + labels_path.string());
    const std::uint32_t n_labels = read_be_u32(labs, labels_path, 4);

    if (n_images != n_labels)
        throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(n_images) +
                                 " vs " + std::to_string(n_labels) + ")");

    const std::size_t dim = static_cast<std::size_t>(rows) * cols;
    LabeledDataset ds;
    ds.features.reserve(n_images);
    ds.labels.reserve(n_images);
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim)))
            throw std::runtime_error("idx: truncated image data at byte " +
                                     std::to_string(16 + static_cast<std::uint64_t>(i) * dim) +
                                     " in " + images_path.string());
        std::vector<double> row(dim);
        for (std::size_t j = 0; j < dim; ++j) row[j] = buf[j] / 255.0;
        ds.features.push_back(std::move(row));

        char lab;
        if (!labs.read(&lab, 1))
            throw std::runtime_error("idx: truncated label data at byte " +
                                     std::to_string(8 + i) + " in " + labels_path.string());
        const int label = static_cast<unsigned char>(lab);
        ds.labels.push_back(label);
        ds.num_classes = std::max(ds.num_classes, label + 1);
    }
    ds.validate();
    return ds;
}

LabeledDataset synth_blobs(int n_classes, int n_per_class, int dim, double spread,
                           std::uint64_t seed) {
    if (n_classes < 1 || n_per_class < 1 || dim < 1 || !(spread > 0.0))
        throw std::invalid_argument("synth_blobs: all arguments must be positive");

    std::mt19937_64 eng(derive_seed(seed, "blobs"));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double side = std::max(1.0, 4.0 * spread * n_classes);

    // Rejection-sample class centers at pairwise distance >= 4 * spread.
    std::vector<std::vector<double>> centers;
    for (int attempt = 0; static_cast<int>(centers.size()) < n_classes; ++attempt) {
        if (attempt > 100000)
            throw std::runtime_error("synth_blobs: could not place separated centers");
        std::vector<double> c(dim);
        for (double& x : c) x = side * unif(eng);
        bool ok = true;
        for (const auto& other : centers) {
            double d2 = 0.0;
            for (int j = 0; j < dim; ++j) d2 += (c[j] - other[j]) * (c[j] - other[j]);
            if (std::sqrt(d2) < 4.0 * spread) { ok = false; break; }
        }
        if (ok) centers.push_back(std::move(c));
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    LabeledDataset ds;
    ds.num_classes = n_classes;
    for (int c = 0; c < n_classes; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            std::vector<double> x(dim);
            for (int j = 0; j < dim; ++j) x[j] = centers[c][j] + spread * normal(eng);
            ds.features.push_back(std::move(x));
            ds.labels.push_back(c);
        }
    }

    // Min-max scale each dimension into [0,1] (preserves linear separability).
    for (int j = 0; j < dim; ++j) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& x : ds.features) {
            lo = std::min(lo, x[j]);
            hi = std::max(hi, x[j]);
        }
        const double range = hi - lo;
        for (auto& x : ds.features) x[j] = range > 0.0 ? (x[j] - lo) / range : 0.5;
    }

    // Shuffle so class blocks are interleaved.
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), eng);
    LabeledDataset shuffled = subset(ds, order);
    shuffled.validate();
    return shuffled;
}

void save_plan(const PartitionPlan& plan, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("plan: cannot open " + path.string());
    os << "# fedbary partition plan v1\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", plan.alpha);
    os << "alpha " << buf << "\n";
    os << "seed " << plan.seed << "\n";
    os << "clients " << plan.assignments.size() << "\n";
    for (std::size_t k = 0; k < plan.assignments.size(); ++k) {
        os << "client " << k << ":";
        for (std::size_t i : plan.assignments[k]) os << ' ' << i;
        os << "\n";
    }
    if (!os) throw std::runtime_error("plan: write failed for " + path.string());
}

PartitionPlan load_plan(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("plan: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "# fedbary partition plan v1")
        throw std::runtime_error("plan: bad header in " + path.string());
    PartitionPlan plan;
    std::size_t n_clients = 0;
    std::string key;
    is >> key >> plan.alpha;
    if (key != "alpha") throw std::runtime_error("plan: expected alpha line");
    is >> key >> plan.seed;
    if (key != "seed") throw std::runtime_error("plan: expected seed line");
    is >> key >> n_clients;
    if (key != "clients") throw std::runtime_error("plan: expected clients line");
    std::getline(is, line);
    plan.assignments.resize(n_clients);
    for (std::size_t k = 0; k < n_clients; ++k) {
        if (!std::getline(is, line))
            throw std::runtime_error("plan: missing client line " + std::to_string(k));
        std::istringstream ss(line);
        std::size_t id = 0;
        std::string tag;
        ss >> tag >> id;
        if (tag != "client" || id != k)
            throw std::runtime_error("plan: malformed client line " + std::to_string(k));
        ss.ignore(1, ':');
        std::size_t idx;
        while (ss >> idx) plan.assignments[k].push_back(idx);
    }
    return plan;
}

}  // namespace fedbary
