#include "fedbary/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "fedbary/common.hpp"

namespace fedbary {

EvalReport evaluate_predictions(const std::vector<std::vector<double>>& probs,
                                const std::vector<int>& labels, std::size_t n_bins,
                                std::vector<BinStat>* bins) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::invalid_argument("evaluate: empty or mismatched predictions");
    if (n_bins == 0)
        throw std::invalid_argument("evaluate: n_bins must be positive");

    std::vector<BinStat> stat(n_bins);
    CompensatedSum nll;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& p = probs[i];
        std::size_t pred = 0;
        for (std::size_t c = 1; c < p.size(); ++c)
            if (p[c] > p[pred]) pred = c;  // ties go to the lowest index
        const bool hit = static_cast<int>(pred) == labels[i];
        correct += hit ? 1 : 0;
        nll.add(-std::log(std::max(p[labels[i]], 1e-12)));

        const double conf = p[pred];
        const std::size_t b =
            std::min(n_bins - 1, static_cast<std::size_t>(conf * static_cast<double>(n_bins)));
        stat[b].count += 1;
        stat[b].confidence_sum += conf;
        stat[b].accuracy_sum += hit ? 1.0 : 0.0;
    }

    const double n = static_cast<double>(probs.size());
    CompensatedSum ece;
    for (const BinStat& b : stat) {
        if (b.count == 0) continue;
        const double cnt = static_cast<double>(b.count);
        ece.add((cnt / n) * std::abs(b.accuracy_sum / cnt - b.confidence_sum / cnt));
    }

    EvalReport report;
    report.accuracy = static_cast<double>(correct) / n;
    report.nll = nll.value() / n;
    report.ece = ece.value();
    report.n_bins = n_bins;
    if (bins) *bins = std::move(stat);
    return report;
}

EvalReport evaluate(const HybridNet& net, const LabeledDataset& test, std::size_t mc_samples,
                    std::size_t n_bins, std::uint64_t seed, std::vector<BinStat>* bins) {
    if (test.size() == 0)
        throw std::invalid_argument("evaluate: empty test set");
    std::vector<std::vector<double>> probs;
    probs.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        probs.push_back(
            predictive(net, test.features[i], mc_samples, derive_seed(seed, "eval-example", i)));
    EvalReport report = evaluate_predictions(probs, test.labels, n_bins, bins);
    report.mc_samples = mc_samples;
    return report;
}

void write_bin_stats_csv(const std::vector<BinStat>& bins, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("bin stats: cannot open " + path.string());
    os << "bin,count,mean_confidence,accuracy\n";
    char buf[64];
    for (std::size_t b = 0; b < bins.size(); ++b) {
        const double cnt = static_cast<double>(bins[b].count);
        os << b << ',' << bins[b].count << ',';
        std::snprintf(buf, sizeof buf, "%.9g", cnt > 0 ? bins[b].confidence_sum / cnt : 0.0);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.9g", cnt > 0 ? bins[b].accuracy_sum / cnt : 0.0);
        os << buf << '\n';
    }
}

}  // namespace fedbary
