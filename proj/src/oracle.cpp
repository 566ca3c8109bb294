#include "flsim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace flsim::oracle {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return s;
}

std::vector<double> trimmed_of(const Rows& rows, const std::vector<std::size_t>& use, std::size_t m) {
    const std::size_t d = rows.front().size();
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j) {
        std::vector<double> col;
        for (std::size_t i : use) {
            col.push_back(rows[i][j]);
        }
        std::sort(col.begin(), col.end());
        double s = 0.0;
        for (std::size_t i = m; i + m < col.size(); ++i) {
            s += col[i];
        }
        out[j] = s / static_cast<double>(col.size() - 2 * m);
    }
    return out;
}

std::vector<double> mean_of(const Rows& rows, const std::vector<std::size_t>& use) {
    std::vector<double> out(rows.front().size(), 0.0);
    for (std::size_t i : use) {
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] += rows[i][j];
        }
    }
    for (double& x : out) {
        x /= static_cast<double>(use.size());
    }
    return out;
}

// Krum scores restricted to the rows in `alive`.
std::vector<double> scores_within(const Rows& rows, const std::vector<std::size_t>& alive, std::size_t m_assumed) {
    const std::size_t n = alive.size();
    const std::size_t keep = n >= m_assumed + 3 ? n - m_assumed - 2 : 1;
    std::vector<double> scores;
    for (std::size_t a : alive) {
        std::vector<double> d;
        for (std::size_t b : alive) {
            if (a != b) {
                d.push_back(sq_dist(rows[a], rows[b]));
            }
        }
        std::sort(d.begin(), d.end());
        double s = 0.0;
        for (std::size_t i = 0; i < keep && i < d.size(); ++i) {
            s += d[i];
        }
        scores.push_back(s);
    }
    return scores;
}

}  // namespace

std::vector<double> mean(const Rows& rows) {
    std::vector<std::size_t> all(rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    return mean_of(rows, all);
}

std::vector<double> trimmed_mean(const Rows& rows, std::size_t m) {
    if (rows.size() <= 2 * m) {
        throw std::invalid_argument("trimmed mean oracle: need n > 2m");
    }
    std::vector<std::size_t> all(rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    return trimmed_of(rows, all, m);
}

std::vector<double> krum_scores(const Rows& rows, std::size_t m_assumed) {
    std::vector<std::size_t> all(rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    return scores_within(rows, all, m_assumed);
}

std::vector<std::size_t> krum_pick(const Rows& rows, std::size_t m_assumed, std::size_t count) {
    std::vector<std::size_t> alive(rows.size());
    for (std::size_t i = 0; i < alive.size(); ++i) {
        alive[i] = i;
    }
    std::vector<std::size_t> picked;
    while (picked.size() < count) {
        const std::vector<double> s = scores_within(rows, alive, m_assumed);
        // second key: total squared distance to every other alive row
        std::vector<double> t(alive.size(), 0.0);
        for (std::size_t i = 0; i < alive.size(); ++i) {
            for (std::size_t b : alive) {
                if (b != alive[i]) {
                    t[i] += sq_dist(rows[alive[i]], rows[b]);
                }
            }
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < s.size(); ++i) {
            if (s[i] < s[best] || (s[i] == s[best] && t[i] < t[best])) {
                best = i;
            }
        }
        picked.push_back(alive[best]);
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(best));
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

Selection multi_krum(const Rows& rows, std::size_t m_assumed) {
    const std::size_t n = rows.size();
    if (n < 2 * m_assumed + 4) {
        throw std::invalid_argument("multi-krum oracle: need n >= 2M + 4");
    }
    Selection out;
    out.selected = krum_pick(rows, m_assumed, n - 2 * m_assumed - 3);
    out.aggregate = mean_of(rows, out.selected);
    return out;
}

Selection bulyan(const Rows& rows, std::size_t m_assumed) {
    const std::size_t n = rows.size();
    if (n <= 4 * m_assumed) {
        throw std::invalid_argument("bulyan oracle: need n > 4M");
    }
    Selection out;
    out.selected = krum_pick(rows, m_assumed, n - 2 * m_assumed);
    out.aggregate = trimmed_of(rows, out.selected, m_assumed);
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> single_linkage_two(const Rows& points) {
    const std::size_t n = points.size();
    if (n < 2) {
        throw std::invalid_argument("single linkage oracle: need n >= 2");
    }
    std::vector<std::size_t> label(n);
    for (std::size_t i = 0; i < n; ++i) {
        label[i] = i;
    }
    std::size_t clusters = n;
    while (clusters > 2) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        std::size_t bj = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (label[i] == label[j]) {
                    continue;
                }
                const double d = std::sqrt(sq_dist(points[i], points[j]));
                if (d < best) {  // strict: earlier (i, j) wins ties
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        const std::size_t from = label[bj];
        const std::size_t to = label[bi];
        for (auto& l : label) {
            if (l == from) {
                l = to;
            }
        }
        --clusters;
    }
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; ++i) {
        (label[i] == label[0] ? out.first : out.second).push_back(i);
    }
    return out;
}

double nt_xent(const Rows& z, double tau) {
    const std::size_t n = z.size();
    auto sim = [&](std::size_t a, std::size_t b) {
        double dot = 0.0;
        double na = 0.0;
        double nb = 0.0;
        for (std::size_t k = 0; k < z[a].size(); ++k) {
            dot += z[a][k] * z[b][k];
            na += z[a][k] * z[a][k];
            nb += z[b][k] * z[b][k];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    auto l = [&](std::size_t i, std::size_t j) {
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k != i) {
                denom += std::exp(sim(i, k) / tau);
            }
        }
        return -std::log(std::exp(sim(i, j) / tau) / denom);
    };
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < n; i += 2) {
        total += l(i, i + 1) + l(i + 1, i);
    }
    return total / static_cast<double>(n);
}

Rows pca_2d(const Rows& points) {
    const std::size_t n = points.size();
    double mx = 0.0;
    double my = 0.0;
    for (const auto& p : points) {
        mx += p[0];
        my += p[1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    for (const auto& p : points) {
        a += (p[0] - mx) * (p[0] - mx);
        b += (p[0] - mx) * (p[1] - my);
        c += (p[1] - my) * (p[1] - my);
    }
    const double half_tr = 0.5 * (a + c);
    const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    const double lambda1 = half_tr + disc;
    // eigenvector of [[a, b], [b, c]] for lambda1, pick the better-conditioned form
    double vx;
    double vy;
    if (std::abs(b) > 0.0) {
        vx = lambda1 - c;
        vy = b;
    } else if (a >= c) {
        vx = 1.0;
        vy = 0.0;
    } else {
        vx = 0.0;
        vy = 1.0;
    }
    const double len = std::hypot(vx, vy);
    vx /= len;
    vy /= len;
    double ux = -vy;
    double uy = vx;
    auto fix = [](double& x, double& y) {
        const double big = std::abs(x) >= std::abs(y) ? x : y;
        if (big < 0.0) {
            x = -x;
            y = -y;
        }
    };
    fix(vx, vy);
    fix(ux, uy);
    Rows out;
    for (const auto& p : points) {
        const double dx = p[0] - mx;
        const double dy = p[1] - my;
        out.push_back({dx * vx + dy * vy, dx * ux + dy * uy});
    }
    return out;
}

Rows forward(const std::vector<DenseLayer>& layers, const Rows& inputs) {
    Rows out;
    for (const auto& x0 : inputs) {
        std::vector<double> x = x0;
        for (const auto& layer : layers) {
            std::vector<double> y(layer.bias);
            for (std::size_t o = 0; o < y.size(); ++o) {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    y[o] += x[i] * layer.weights[i][o];
                }
                if (layer.leaky && y[o] < 0.0) {
                    y[o] *= layer.alpha;
                }
            }
            x = std::move(y);
        }
        out.push_back(std::move(x));
    }
    return out;
}

}  // namespace flsim::oracle
