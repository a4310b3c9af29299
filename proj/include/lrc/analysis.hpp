#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lrc/corpus.hpp"
#include "lrc/metrics.hpp"
#include "lrc/model.hpp"
#include "lrc/rng.hpp"
#include "lrc/util.hpp"

namespace lrc {

// Row-major matrix of per-block latent codes (or any feature rows), carried in
// double precision: the analyses below (eigensolver, probe) are sensitive to
// accumulation error in ways float32 training is not.
struct LatentMatrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;
    std::vector<std::string> labels;  // one per row, or empty

    double at(size_t r, size_t c) const { return data[r * cols + c]; }

    void validate() const {
        if (data.size() != rows * cols) {
            throw ValidationError("latents: " + fmt_int((long long)data.size()) +
                                  " entries for a " + fmt_int((long long)rows) + "x" +
                                  fmt_int((long long)cols) + " matrix");
        }
        if (!labels.empty() && labels.size() != rows) {
            throw ValidationError("latents: " + fmt_int((long long)labels.size()) +
                                  " labels for " + fmt_int((long long)rows) + " rows");
        }
        for (double v : data) {
            if (!std::isfinite(v)) throw NumericError("latents: non-finite entry");
        }
    }
};

// One row per block: the encoder's M x d_model latent code, flattened. Rows
// inherit the corpus tier as their label.
inline LatentMatrix collect_latents(const Model& model, const Corpus& corpus) {
    check_corpus_matches<float>(model.cfg, corpus);
    LatentMatrix lm;
    lm.rows = corpus.blocks.size();
    lm.cols = model.cfg.M * model.cfg.d_model;
    lm.data.reserve(lm.rows * lm.cols);
    lm.labels.assign(lm.rows, tier_name(corpus.tier));
    for (const auto& b : corpus.blocks) {
        const auto code = model.encode(b);
        for (float v : code.z.data) lm.data.push_back(double(v));
    }
    lm.validate();
    return lm;
}

// ---------------------------------------------------------------------------
// Cyclic Jacobi eigendecomposition of a symmetric matrix. Quadratically
// convergent and dependency-free; entirely adequate below a few thousand
// dimensions, which is all the latent widths here need.
// ---------------------------------------------------------------------------

struct EigenSym {
    size_t n = 0;
    std::vector<double> values;   // descending
    std::vector<double> vectors;  // column k (stride n) pairs with values[k]
};

inline EigenSym jacobi_eigen_sym(std::vector<double> a, size_t n) {
    if (n == 0 || a.size() != n * n) {
        throw ValidationError("eigen: matrix size does not match dimension");
    }
    std::vector<double> v(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    auto off_norm = [&] {
        double s = 0.0;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) s += 2.0 * a[p * n + q] * a[p * n + q];
        }
        return std::sqrt(s);
    };
    double fro = 0.0;
    for (double x : a) fro += x * x;
    fro = std::sqrt(fro);
    const double stop = 1e-10 * std::max(fro, 1e-300);

    for (int sweep = 0; sweep < 100 && off_norm() > stop; ++sweep) {
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (size_t k = 0; k < n; ++k) {  // rotate rows/cols p and q
                    const double akp = a[k * n + p];
                    const double akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k];
                    const double aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                    const double vkp = v[k * n + p];
                    const double vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if (off_norm() > stop) {
        throw NumericError("eigen: Jacobi sweeps did not converge");  // unreachable in practice
    }

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return a[x * n + x] > a[y * n + y]; });
    EigenSym e;
    e.n = n;
    e.values.resize(n);
    e.vectors.resize(n * n);
    for (size_t k = 0; k < n; ++k) {
        e.values[k] = a[order[k] * n + order[k]];
        for (size_t i = 0; i < n; ++i) e.vectors[i * n + k] = v[i * n + order[k]];
    }
    return e;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaReport {
    std::vector<double> eigenvalues;  // descending variance per component
    std::vector<double> cumvar;       // cumulative explained-variance ratio
    size_t intrinsic_dim_95 = 0;      // smallest k with cumvar[k-1] >= 0.95
};

namespace detail {

// Column-centered copy of the matrix.
inline std::vector<double> center_rows(const LatentMatrix& lm) {
    std::vector<double> mean(lm.cols, 0.0);
    for (size_t r = 0; r < lm.rows; ++r) {
        for (size_t c = 0; c < lm.cols; ++c) mean[c] += lm.at(r, c);
    }
    for (double& m : mean) m /= double(lm.rows);
    std::vector<double> xc(lm.rows * lm.cols);
    for (size_t r = 0; r < lm.rows; ++r) {
        for (size_t c = 0; c < lm.cols; ++c) xc[r * lm.cols + c] = lm.at(r, c) - mean[c];
    }
    return xc;
}

// Variance spectrum of the centered data. Over the feature covariance
// Xc'Xc/(n-1) when features are the smaller side, else over the Gram matrix
// XcXc'/(n-1), which shares its nonzero spectrum.
struct Spectrum {
    EigenSym eig;
    bool gram = false;  // eigenvectors live in row space, not feature space
    double total = 0.0;
};

inline Spectrum variance_spectrum(const std::vector<double>& xc, size_t rows, size_t cols) {
    const size_t n = std::min(rows, cols);
    const bool gram = cols > rows;
    std::vector<double> m(n * n, 0.0);
    if (!gram) {
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i; j < n; ++j) {
                double s = 0.0;
                for (size_t r = 0; r < rows; ++r) s += xc[r * cols + i] * xc[r * cols + j];
                m[i * n + j] = m[j * n + i] = s / double(rows - 1);
            }
        }
    } else {
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i; j < n; ++j) {
                double s = 0.0;
                for (size_t c = 0; c < cols; ++c) s += xc[i * cols + c] * xc[j * cols + c];
                m[i * n + j] = m[j * n + i] = s / double(rows - 1);
            }
        }
    }
    Spectrum sp;
    sp.gram = gram;
    sp.total = 0.0;
    for (size_t i = 0; i < n; ++i) sp.total += m[i * n + i];
    sp.eig = jacobi_eigen_sym(std::move(m), n);
    // tiny negative values are Jacobi roundoff on a PSD matrix
    for (double& v : sp.eig.values) v = std::max(v, 0.0);
    return sp;
}

}  // namespace detail

inline PcaReport pca_cumvar(const LatentMatrix& lm) {
    lm.validate();
    if (lm.rows < 2) throw ValidationError("pca: need at least 2 rows");
    const auto xc = detail::center_rows(lm);
    const auto sp = detail::variance_spectrum(xc, lm.rows, lm.cols);
    if (sp.total <= 0.0) {
        throw ValidationError("pca: degenerate input, total variance is zero");
    }
    PcaReport rep;
    rep.eigenvalues = sp.eig.values;
    rep.cumvar.resize(rep.eigenvalues.size());
    double acc = 0.0;
    for (size_t k = 0; k < rep.eigenvalues.size(); ++k) {
        acc += rep.eigenvalues[k];
        rep.cumvar[k] = acc / sp.total;
    }
    rep.intrinsic_dim_95 = rep.cumvar.size();
    for (size_t k = 0; k < rep.cumvar.size(); ++k) {
        if (rep.cumvar[k] >= 0.95) {
            rep.intrinsic_dim_95 = k + 1;
            break;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// 2D projection onto the top principal components
// ---------------------------------------------------------------------------

struct Projection {
    std::vector<double> pc1;
    std::vector<double> pc2;
    std::vector<std::string> labels;
};

inline Projection project_2d(const LatentMatrix& lm) {
    lm.validate();
    if (lm.rows < 2) throw ValidationError("projection: need at least 2 rows");
    const auto xc = detail::center_rows(lm);
    const auto sp = detail::variance_spectrum(xc, lm.rows, lm.cols);
    if (sp.total <= 0.0) {
        throw ValidationError("projection: degenerate input, total variance is zero");
    }

    Projection out;
    out.labels = lm.labels;
    out.pc1.assign(lm.rows, 0.0);
    out.pc2.assign(lm.rows, 0.0);
    const size_t n = sp.eig.n;
    for (size_t k = 0; k < 2; ++k) {
        auto& coord = k == 0 ? out.pc1 : out.pc2;
        if (k >= n || sp.eig.values[k] <= 1e-12 * sp.total) continue;  // flat direction

        // feature-space loading: the eigenvector itself, or Xc'u / sigma when
        // the spectrum came from the Gram matrix
        std::vector<double> load(lm.cols, 0.0);
        if (!sp.gram) {
            for (size_t c = 0; c < lm.cols; ++c) load[c] = sp.eig.vectors[c * n + k];
        } else {
            const double sigma = std::sqrt(sp.eig.values[k] * double(lm.rows - 1));
            for (size_t r = 0; r < lm.rows; ++r) {
                const double u = sp.eig.vectors[r * n + k];
                for (size_t c = 0; c < lm.cols; ++c) load[c] += xc[r * lm.cols + c] * u;
            }
            for (double& l : load) l /= sigma;
        }

        // deterministic sign: the largest-magnitude loading points positive
        size_t arg = 0;
        for (size_t c = 1; c < lm.cols; ++c) {
            if (std::abs(load[c]) > std::abs(load[arg])) arg = c;
        }
        const double sign = load[arg] < 0.0 ? -1.0 : 1.0;

        for (size_t r = 0; r < lm.rows; ++r) {
            double s = 0.0;
            for (size_t c = 0; c < lm.cols; ++c) s += xc[r * lm.cols + c] * load[c];
            coord[r] = sign * s;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear separability probe
// ---------------------------------------------------------------------------

// Logistic-regression probe: is a hyperplane enough to tell the two latent
// sets apart? Full-batch gradient descent, 500 steps at lr 0.1 on train-split
// standardized features; returns held-out accuracy on a seeded 80/20 split.
// The probe certifies separability, it does not try to be an optimal
// classifier.
inline double linear_probe(const LatentMatrix& a, const LatentMatrix& b, uint64_t seed) {
    a.validate();
    b.validate();
    if (a.rows == 0 || b.rows == 0) throw ValidationError("probe: both latent sets must be nonempty");
    if (a.cols != b.cols) {
        throw ValidationError("probe: width mismatch, " + fmt_int((long long)a.cols) + " vs " +
                              fmt_int((long long)b.cols));
    }
    const size_t cols = a.cols;
    const size_t n = a.rows + b.rows;
    if (n < 5) throw ValidationError("probe: need at least 5 rows total for an 80/20 split");

    auto row_of = [&](size_t i) {
        return i < a.rows ? &a.data[i * cols] : &b.data[(i - a.rows) * cols];
    };
    auto label_of = [&](size_t i) { return i < a.rows ? 0.0 : 1.0; };

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng(seed).fork(0x9806e);
    shuffle_indices(order, rng);
    const size_t n_test = std::max<size_t>(1, n / 5);
    const size_t n_train = n - n_test;

    // standardize with train-split statistics
    std::vector<double> mean(cols, 0.0), sd(cols, 0.0);
    for (size_t i = 0; i < n_train; ++i) {
        const double* row = row_of(order[i]);
        for (size_t c = 0; c < cols; ++c) mean[c] += row[c];
    }
    for (double& m : mean) m /= double(n_train);
    for (size_t i = 0; i < n_train; ++i) {
        const double* row = row_of(order[i]);
        for (size_t c = 0; c < cols; ++c) {
            const double d = row[c] - mean[c];
            sd[c] += d * d;
        }
    }
    for (double& s : sd) s = std::max(std::sqrt(s / double(n_train)), 1e-8);

    std::vector<double> w(cols, 0.0);
    double bias = 0.0;
    std::vector<double> grad(cols);
    for (int step = 0; step < 500; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double gbias = 0.0;
        for (size_t i = 0; i < n_train; ++i) {
            const double* row = row_of(order[i]);
            double s = bias;
            for (size_t c = 0; c < cols; ++c) s += w[c] * (row[c] - mean[c]) / sd[c];
            const double p = 1.0 / (1.0 + std::exp(-s));
            const double err = p - label_of(order[i]);
            for (size_t c = 0; c < cols; ++c) grad[c] += err * (row[c] - mean[c]) / sd[c];
            gbias += err;
        }
        for (size_t c = 0; c < cols; ++c) w[c] -= 0.1 * grad[c] / double(n_train);
        bias -= 0.1 * gbias / double(n_train);
    }

    size_t correct = 0;
    for (size_t i = n_train; i < n; ++i) {
        const double* row = row_of(order[i]);
        double s = bias;
        for (size_t c = 0; c < cols; ++c) s += w[c] * (row[c] - mean[c]) / sd[c];
        if ((s > 0.0 ? 1.0 : 0.0) == label_of(order[i])) ++correct;
    }
    return double(correct) / double(n_test);
}

// ---------------------------------------------------------------------------
// CSV exports (plot-ready; no rendering here)
// ---------------------------------------------------------------------------

inline std::string latent_csv(const LatentMatrix& lm) {
    std::string out = "label";
    for (size_t c = 0; c < lm.cols; ++c) out += ",f" + fmt_int((long long)c);
    out += "\n";
    for (size_t r = 0; r < lm.rows; ++r) {
        out += lm.labels.empty() ? "" : lm.labels[r];
        for (size_t c = 0; c < lm.cols; ++c) out += "," + fmt_double(lm.at(r, c));
        out += "\n";
    }
    return out;
}

inline std::string pca_csv(const PcaReport& rep) {
    std::string out = "component_index,eigenvalue,cumvar\n";
    for (size_t k = 0; k < rep.cumvar.size(); ++k) {
        out += fmt_int((long long)k) + "," + fmt_double(rep.eigenvalues[k]) + "," +
               fmt_double(rep.cumvar[k]) + "\n";
    }
    return out;
}

inline std::string projection_csv(const Projection& proj) {
    std::string out = "label,pc1,pc2\n";
    for (size_t r = 0; r < proj.pc1.size(); ++r) {
        out += (proj.labels.empty() ? "" : proj.labels[r]) + "," + fmt_double(proj.pc1[r]) +
               "," + fmt_double(proj.pc2[r]) + "\n";
    }
    return out;
}

}  // namespace lrc
