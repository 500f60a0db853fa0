#pragma once

#include <cmath>
#include <string>
#include <vector>

namespace camf::testing {

// Independent n-gram counter: linear scans over word vectors, no maps.
inline double oracle_bleu(const std::vector<std::string>& h, const std::vector<std::string>& r, int max_n) {
    if (h.empty()) return 0.0;
    auto occurrences = [](const std::vector<std::string>& seq, std::size_t start, std::size_t n,
                          const std::vector<std::string>& in) {
        std::size_t c = 0;
        for (std::size_t j = 0; j + n <= in.size(); ++j) {
            bool same = true;
            for (std::size_t k = 0; k < n && same; ++k) same = in[j + k] == seq[start + k];
            c += same;
        }
        return c;
    };
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const std::size_t un = static_cast<std::size_t>(n);
        std::size_t matched = 0, total = 0;
        for (std::size_t i = 0; i + un <= h.size(); ++i) {
            ++total;
            // count this occurrence only if it is among the first min(hc, rc)
            std::size_t earlier = 0;
            for (std::size_t j = 0; j < i; ++j) {
                bool same = true;
                for (std::size_t k = 0; k < un && same; ++k) same = h[j + k] == h[i + k];
                earlier += same;
            }
            if (earlier < occurrences(h, i, un, r)) ++matched;
        }
        const double p = matched ? static_cast<double>(matched) / static_cast<double>(total)
                                 : 0.1 / (static_cast<double>(total) + 0.1);
        log_sum += std::log(p);
    }
    const double hl = static_cast<double>(h.size()), rl = static_cast<double>(r.size());
    return (hl < rl ? std::exp(1.0 - rl / hl) : 1.0) * std::exp(log_sum / max_n);
}

}  // namespace camf::testing
