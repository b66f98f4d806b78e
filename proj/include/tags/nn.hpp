#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "tags/tensor.hpp"

namespace tags {

// Row-wise softmax with temperature and row-max stabilization.
inline Tensor softmax_t(const Tensor& logits, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_t: temperature must be positive");
    const std::size_t n = logits.rows(), m = logits.cols();
    Tensor out = Tensor::zeros(logits.shape);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double e = std::exp((logits.at(i, j) - mx) / tau);
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= z;
    }
    return out;
}

// Mean negative log-probability of targets over the rows where mask is set.
inline double nll_value(const Tensor& probs, const std::vector<int>& targets,
                        const std::vector<bool>& mask) {
    const std::size_t n = probs.rows();
    if (targets.size() != n || mask.size() != n) {
        throw std::invalid_argument("nll: targets/mask length does not match rows");
    }
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        sum -= std::log(probs.at(i, static_cast<std::size_t>(targets[i])));
        ++cnt;
    }
    return cnt ? sum / static_cast<double>(cnt) : 0.0;
}

// Reverse-mode tape over dense tensors. Every op appends a node holding the
// forward value and a closure that scatters the node's gradient to its
// inputs. backward() runs the closures newest-first and then flushes leaf
// gradients into the registered Params.
class Tape {
public:
    using Id = std::size_t;

    explicit Tape(bool grad = true) : grad_(grad) {}

    bool grad_enabled() const { return grad_; }

    const Tensor& value(Id id) const { return nodes_[id].value; }
    const Tensor& grad_of(Id id) const { return nodes_[id].grad; }

    Id leaf(Tensor v) { return push(std::move(v), nullptr); }

    // Leaf wired to an external parameter; repeated calls reuse the node.
    Id param(const Param& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return it->second;
        Id id = push(p.value, nullptr);
        param_ids_.emplace(&p, id);
        bound_.push_back({id, &p});
        return id;
    }

    Id matmul(Id a, Id b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (A.cols() != B.rows()) {
            throw std::invalid_argument("matmul: shape mismatch " + A.shape_str() + " x " + B.shape_str());
        }
        const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
        Tensor C = Tensor::zeros({n, m});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < k; ++t) {
                const double av = A.at(i, t);
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j) C.at(i, j) += av * B.at(t, j);
            }
        }
        return push(std::move(C), [a, b, n, k, m](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            Tensor& gb = tp.nodes_[b].grad;
            const Tensor& A = tp.nodes_[a].value;
            const Tensor& B = tp.nodes_[b].value;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const double gv = g.at(i, j);
                    if (gv == 0.0) continue;
                    for (std::size_t t = 0; t < k; ++t) {
                        ga.at(i, t) += gv * B.at(t, j);
                        gb.at(t, j) += A.at(i, t) * gv;
                    }
                }
            }
        });
    }

    // A * B^T with A [n,k], B [m,k]
    Id matmul_nt(Id a, Id b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (A.cols() != B.cols()) {
            throw std::invalid_argument("matmul_nt: shape mismatch " + A.shape_str() + " x " + B.shape_str());
        }
        const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
        Tensor C = Tensor::zeros({n, m});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0.0;
                for (std::size_t t = 0; t < k; ++t) s += A.at(i, t) * B.at(j, t);
                C.at(i, j) = s;
            }
        }
        return push(std::move(C), [a, b, n, k, m](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            Tensor& gb = tp.nodes_[b].grad;
            const Tensor& A = tp.nodes_[a].value;
            const Tensor& B = tp.nodes_[b].value;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const double gv = g.at(i, j);
                    if (gv == 0.0) continue;
                    for (std::size_t t = 0; t < k; ++t) {
                        ga.at(i, t) += gv * B.at(j, t);
                        gb.at(j, t) += gv * A.at(i, t);
                    }
                }
            }
        });
    }

    Id add(Id a, Id b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (!A.same_shape(B)) {
            throw std::invalid_argument("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
        }
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.values[i] += B.values[i];
        return push(std::move(C), [a, b](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            Tensor& gb = tp.nodes_[b].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.values[i] += g.values[i];
                gb.values[i] += g.values[i];
            }
        });
    }

    Id sub(Id a, Id b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (!A.same_shape(B)) {
            throw std::invalid_argument("sub: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
        }
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.values[i] -= B.values[i];
        return push(std::move(C), [a, b](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            Tensor& gb = tp.nodes_[b].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.values[i] += g.values[i];
                gb.values[i] -= g.values[i];
            }
        });
    }

    Id mul(Id a, Id b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (!A.same_shape(B)) {
            throw std::invalid_argument("mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
        }
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.values[i] *= B.values[i];
        return push(std::move(C), [a, b](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            Tensor& gb = tp.nodes_[b].grad;
            const Tensor& A = tp.nodes_[a].value;
            const Tensor& B = tp.nodes_[b].value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.values[i] += g.values[i] * B.values[i];
                gb.values[i] += g.values[i] * A.values[i];
            }
        });
    }

    // x [n,m] plus v broadcast over rows; v is [1,m] or [m]
    Id add_rowvec(Id x, Id v) {
        const Tensor& X = nodes_[x].value;
        const Tensor& V = nodes_[v].value;
        const std::size_t m = X.cols();
        if (V.size() != m) {
            throw std::invalid_argument("add_rowvec: shape mismatch " + X.shape_str() + " + " + V.shape_str());
        }
        Tensor C = X;
        const std::size_t n = X.rows();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) C.at(i, j) += V.values[j];
        }
        return push(std::move(C), [x, v, n, m](Tape& tp, const Tensor& g) {
            Tensor& gx = tp.nodes_[x].grad;
            Tensor& gv = tp.nodes_[v].grad;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    gx.at(i, j) += g.at(i, j);
                    gv.values[j] += g.at(i, j);
                }
            }
        });
    }

    Id scale(Id a, double c) {
        Tensor C = nodes_[a].value;
        for (double& v : C.values) v *= c;
        return push(std::move(C), [a, c](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += c * g.values[i];
        });
    }

    Id add_const(Id a, double c) {
        Tensor C = nodes_[a].value;
        for (double& v : C.values) v += c;
        return push(std::move(C), [a](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i];
        });
    }

    Id sum(Id a) {
        double s = 0.0;
        for (double v : nodes_[a].value.values) s += v;
        return push(Tensor({1, 1}, {s}), [a](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            for (double& v : ga.values) v += g.values[0];
        });
    }

    Id relu(Id a) {
        Tensor C = nodes_[a].value;
        for (double& v : C.values) v = v > 0.0 ? v : 0.0;
        return push(std::move(C), [a](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            const Tensor& A = tp.nodes_[a].value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (A.values[i] > 0.0) ga.values[i] += g.values[i];
            }
        });
    }

    Id sigmoid(Id a) {
        Tensor C = nodes_[a].value;
        for (double& v : C.values) v = 1.0 / (1.0 + std::exp(-v));
        Id out = push(std::move(C), nullptr);
        set_back(out, [a, out](Tape& tp, const Tensor& g) {
            const Tensor& Y = tp.nodes_[out].value;
            Tensor& ga = tp.nodes_[a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = Y.values[i];
                ga.values[i] += g.values[i] * y * (1.0 - y);
            }
        });
        return out;
    }

    Id softmax_rows(Id a, double tau) {
        Tensor Y = softmax_t(nodes_[a].value, tau);
        const std::size_t n = Y.rows(), m = Y.cols();
        Id out = push(std::move(Y), nullptr);
        set_back(out, [a, out, n, m, tau](Tape& tp, const Tensor& g) {
            const Tensor& Y = tp.nodes_[out].value;
            Tensor& ga = tp.nodes_[a].grad;
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) dot += g.at(i, j) * Y.at(i, j);
                for (std::size_t j = 0; j < m; ++j) {
                    ga.at(i, j) += Y.at(i, j) * (g.at(i, j) - dot) / tau;
                }
            }
        });
        return out;
    }

    // Row-wise layer norm followed by elementwise gain and bias.
    Id layer_norm(Id x, Id gain, Id bias, double eps = 1e-5) {
        const Tensor& X = nodes_[x].value;
        const std::size_t n = X.rows(), d = X.cols();
        const Tensor& G = nodes_[gain].value;
        const Tensor& B = nodes_[bias].value;
        if (G.size() != d || B.size() != d) {
            throw std::invalid_argument("layer_norm: gain/bias size mismatch for " + X.shape_str());
        }
        Tensor Y = Tensor::zeros({n, d});
        Tensor xhat = Tensor::zeros({n, d});
        std::vector<double> inv(n);
        for (std::size_t i = 0; i < n; ++i) {
            double mu = 0.0;
            for (std::size_t j = 0; j < d; ++j) mu += X.at(i, j);
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double c = X.at(i, j) - mu;
                var += c * c;
            }
            var /= static_cast<double>(d);
            inv[i] = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < d; ++j) {
                xhat.at(i, j) = (X.at(i, j) - mu) * inv[i];
                Y.at(i, j) = G.values[j] * xhat.at(i, j) + B.values[j];
            }
        }
        return push(std::move(Y), [x, gain, bias, n, d, xhat = std::move(xhat),
                                   inv = std::move(inv)](Tape& tp, const Tensor& g) {
            Tensor& gx = tp.nodes_[x].grad;
            Tensor& gg = tp.nodes_[gain].grad;
            Tensor& gb = tp.nodes_[bias].grad;
            const Tensor& G = tp.nodes_[gain].value;
            for (std::size_t i = 0; i < n; ++i) {
                double mean_gh = 0.0, mean_ghx = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gh = g.at(i, j) * G.values[j];
                    mean_gh += gh;
                    mean_ghx += gh * xhat.at(i, j);
                    gg.values[j] += g.at(i, j) * xhat.at(i, j);
                    gb.values[j] += g.at(i, j);
                }
                mean_gh /= static_cast<double>(d);
                mean_ghx /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double gh = g.at(i, j) * G.values[j];
                    gx.at(i, j) += inv[i] * (gh - mean_gh - xhat.at(i, j) * mean_ghx);
                }
            }
        });
    }

    // Gather rows of table by id; duplicates accumulate in backward.
    Id embedding_rows(Id table, std::vector<int> ids) {
        const Tensor& T = nodes_[table].value;
        const std::size_t d = T.cols();
        Tensor C = Tensor::zeros({ids.size(), d});
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const auto row = static_cast<std::size_t>(ids[r]);
            if (row >= T.rows()) {
                throw std::out_of_range("embedding_rows: id " + std::to_string(ids[r]) + " out of range");
            }
            for (std::size_t j = 0; j < d; ++j) C.at(r, j) = T.at(row, j);
        }
        return push(std::move(C), [table, ids = std::move(ids), d](Tape& tp, const Tensor& g) {
            Tensor& gt = tp.nodes_[table].grad;
            for (std::size_t r = 0; r < ids.size(); ++r) {
                const auto row = static_cast<std::size_t>(ids[r]);
                for (std::size_t j = 0; j < d; ++j) gt.at(row, j) += g.at(r, j);
            }
        });
    }

    Id slice_rows(Id x, std::size_t r0, std::size_t r1) {
        const Tensor& X = nodes_[x].value;
        if (r1 > X.rows() || r0 > r1) throw std::out_of_range("slice_rows: bad range");
        const std::size_t d = X.cols();
        Tensor C = Tensor::zeros({r1 - r0, d});
        for (std::size_t i = r0; i < r1; ++i) {
            for (std::size_t j = 0; j < d; ++j) C.at(i - r0, j) = X.at(i, j);
        }
        return push(std::move(C), [x, r0, r1, d](Tape& tp, const Tensor& g) {
            Tensor& gx = tp.nodes_[x].grad;
            for (std::size_t i = r0; i < r1; ++i) {
                for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += g.at(i - r0, j);
            }
        });
    }

    Id slice_cols(Id x, std::size_t c0, std::size_t c1) {
        const Tensor& X = nodes_[x].value;
        if (c1 > X.cols() || c0 > c1) throw std::out_of_range("slice_cols: bad range");
        const std::size_t n = X.rows();
        Tensor C = Tensor::zeros({n, c1 - c0});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = c0; j < c1; ++j) C.at(i, j - c0) = X.at(i, j);
        }
        return push(std::move(C), [x, c0, c1, n](Tape& tp, const Tensor& g) {
            Tensor& gx = tp.nodes_[x].grad;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = c0; j < c1; ++j) gx.at(i, j) += g.at(i, j - c0);
            }
        });
    }

    Id concat_rows(Id a, Id b) {
        const Tensor& A = nodes_[a].value;
        const Tensor& B = nodes_[b].value;
        if (A.cols() != B.cols()) {
            throw std::invalid_argument("concat_rows: shape mismatch " + A.shape_str() + " / " + B.shape_str());
        }
        const std::size_t na = A.rows(), nb = B.rows(), d = A.cols();
        Tensor C = Tensor::zeros({na + nb, d});
        for (std::size_t i = 0; i < na; ++i)
            for (std::size_t j = 0; j < d; ++j) C.at(i, j) = A.at(i, j);
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t j = 0; j < d; ++j) C.at(na + i, j) = B.at(i, j);
        return push(std::move(C), [a, b, na, nb, d](Tape& tp, const Tensor& g) {
            Tensor& ga = tp.nodes_[a].grad;
            Tensor& gb = tp.nodes_[b].grad;
            for (std::size_t i = 0; i < na; ++i)
                for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += g.at(i, j);
            for (std::size_t i = 0; i < nb; ++i)
                for (std::size_t j = 0; j < d; ++j) gb.at(i, j) += g.at(na + i, j);
        });
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
        const std::size_t n = nodes_[parts[0]].value.rows();
        std::size_t total = 0;
        for (Id p : parts) {
            if (nodes_[p].value.rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
            total += nodes_[p].value.cols();
        }
        Tensor C = Tensor::zeros({n, total});
        std::size_t off = 0;
        for (Id p : parts) {
            const Tensor& P = nodes_[p].value;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < P.cols(); ++j) C.at(i, off + j) = P.at(i, j);
            off += P.cols();
        }
        return push(std::move(C), [parts, n](Tape& tp, const Tensor& g) {
            std::size_t off = 0;
            for (Id p : parts) {
                Tensor& gp = tp.nodes_[p].grad;
                const std::size_t c = gp.cols();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) gp.at(i, j) += g.at(i, off + j);
                off += c;
            }
        });
    }

    // [n,d] -> [1,d] column means
    Id mean_rows(Id x) {
        const Tensor& X = nodes_[x].value;
        const std::size_t n = X.rows(), d = X.cols();
        if (n == 0) throw std::invalid_argument("mean_rows: empty input");
        Tensor C = Tensor::zeros({1, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) C.at(0, j) += X.at(i, j);
        for (std::size_t j = 0; j < d; ++j) C.at(0, j) /= static_cast<double>(n);
        return push(std::move(C), [x, n, d](Tape& tp, const Tensor& g) {
            Tensor& gx = tp.nodes_[x].grad;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += g.at(0, j) / static_cast<double>(n);
        });
    }

    // [n,d] -> [1,d] per-column smooth max: log(sum_i exp(beta*x[i,j]))/beta,
    // shifted by the column max for stability. beta -> inf recovers max.
    Id lse_rows(Id x, double beta) {
        const Tensor& X = nodes_[x].value;
        const std::size_t n = X.rows(), d = X.cols();
        if (n == 0) throw std::invalid_argument("lse_rows: empty input");
        if (beta <= 0.0) throw std::invalid_argument("lse_rows: beta must be positive");
        Tensor C = Tensor::zeros({1, d});
        for (std::size_t j = 0; j < d; ++j) {
            double hi = X.at(0, j);
            for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, X.at(i, j));
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += std::exp(beta * (X.at(i, j) - hi));
            C.at(0, j) = hi + std::log(s) / beta;
        }
        return push(std::move(C), [x, n, d, beta](Tape& tp, const Tensor& g) {
            Tensor& gx = tp.nodes_[x].grad;
            const Tensor& X = tp.nodes_[x].value;
            for (std::size_t j = 0; j < d; ++j) {
                double hi = X.at(0, j);
                for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, X.at(i, j));
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += std::exp(beta * (X.at(i, j) - hi));
                for (std::size_t i = 0; i < n; ++i) {
                    gx.at(i, j) += g.at(0, j) * std::exp(beta * (X.at(i, j) - hi)) / s;
                }
            }
        });
    }

    // Mean -log probs[i, targets[i]] over masked rows; [1,1] output.
    Id nll(Id probs, std::vector<int> targets, std::vector<bool> mask) {
        const Tensor& P = nodes_[probs].value;
        const double v = nll_value(P, targets, mask);
        std::size_t cnt = 0;
        for (bool b : mask) cnt += b ? 1 : 0;
        return push(Tensor({1, 1}, {v}),
                    [probs, targets = std::move(targets), mask = std::move(mask), cnt](Tape& tp, const Tensor& g) {
            if (cnt == 0) return;
            Tensor& gp = tp.nodes_[probs].grad;
            const Tensor& P = tp.nodes_[probs].value;
            const double go = g.values[0] / static_cast<double>(cnt);
            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (!mask[i]) continue;
                const auto t = static_cast<std::size_t>(targets[i]);
                gp.at(i, t) -= go / P.at(i, t);
            }
        });
    }

    Id affine(Id x, const Param& W, const Param& b) {
        return add_rowvec(matmul(x, param(W)), param(b));
    }

    // Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse and accumulates
    // leaf gradients into their bound Params.
    void backward(Id loss) {
        if (!grad_) throw std::logic_error("backward: tape built without gradients");
        if (nodes_[loss].value.size() != 1) throw std::invalid_argument("backward: loss is not scalar");
        nodes_[loss].grad.values[0] = 1.0;
        for (std::size_t i = loss + 1; i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].grad);
        }
        for (const auto& [id, p] : bound_) {
            const Tensor& g = nodes_[id].grad;
            for (std::size_t i = 0; i < g.size(); ++i) p->grad.values[i] += g.values[i];
        }
    }

    void clear() {
        nodes_.clear();
        bound_.clear();
        param_ids_.clear();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, const Tensor&)> back;
    };

    Id push(Tensor v, std::function<void(Tape&, const Tensor&)> back) {
        Node n;
        if (grad_) {
            n.grad = Tensor::zeros(v.shape);
            n.back = std::move(back);
        }
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    void set_back(Id id, std::function<void(Tape&, const Tensor&)> back) {
        if (grad_) nodes_[id].back = std::move(back);
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<Id, const Param*>> bound_;
    std::unordered_map<const Param*, Id> param_ids_;
    bool grad_;
};

} // namespace tags
