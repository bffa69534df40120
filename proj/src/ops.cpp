#include "lr/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>

namespace lr {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

namespace {

// Shared record helper: decides per-input gating once, at record time.
void maybe_record(Tape* tape, std::vector<Tensor> inputs, Tensor& out,
                  const std::function<std::function<void()>(const std::vector<bool>&)>& make_rule) {
    if (!tape) return;
    std::vector<bool> needs(inputs.size(), false);
    bool any = false;
    for (size_t i = 0; i < inputs.size(); ++i) {
        needs[i] = tape->wants_grad(inputs[i]);
        any = any || needs[i];
    }
    if (!any) return;
    out.set_requires_grad(true);
    auto rule = make_rule(needs);
    tape->record(std::move(inputs), std::move(needs), out, std::move(rule));
}

void check_2d(const Tensor& t, const char* name) {
    if (t.ndim() != 2) {
        throw ShapeError(std::string(name) + " must be 2-d, got " + shape_str(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    check_2d(a, "matmul lhs");
    check_2d(b, "matmul rhs");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    {
        ConstMap am(a.data().data(), m, k), bm(b.data().data(), k, n);
        MutMap om(out.mutable_data().data(), m, n);
        om.noalias() = am * bm;
    }
    maybe_record(tape, {a, b}, out, [&](const std::vector<bool>& needs) {
        Tensor ta = a, tb = b, to = out;
        bool ga = needs[0], gb = needs[1];
        return [ta, tb, to, ga, gb, m, k, n]() mutable {
            ConstMap gom(to.grad().data(), m, n);
            if (ga) {
                ConstMap bm(tb.data().data(), k, n);
                MutMap gam(ta.grad_mut().data(), m, k);
                gam.noalias() += gom * bm.transpose();
            }
            if (gb) {
                ConstMap am(ta.data().data(), m, k);
                MutMap gbm(tb.grad_mut().data(), k, n);
                gbm.noalias() += am.transpose() * gom;
            }
        };
    });
    return out;
}

namespace {

struct ConvDims {
    int n, c, h, w, f, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, int stride, int pad) {
    if (x.ndim() != 4) throw ShapeError("conv2d input must be [N,C,H,W], got " + shape_str(x.shape()));
    if (k.ndim() != 4 || k.dim(2) != 3 || k.dim(3) != 3) {
        throw ShapeError("conv2d kernel must be [F,C,3,3], got " + shape_str(k.shape()));
    }
    if (x.dim(1) != k.dim(1)) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(k.shape()));
    }
    if (stride != 1 && stride != 2) throw ConfigError("conv2d stride must be 1 or 2");
    if (pad != 0 && pad != 1) throw ConfigError("conv2d pad must be 0 or 1");
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), 0, 0};
    d.oh = (d.h + 2 * pad - 3) / stride + 1;
    d.ow = (d.w + 2 * pad - 3) / stride + 1;
    if (d.h + 2 * pad < 3 || d.w + 2 * pad < 3) {
        throw ShapeError("conv2d output would be empty for input " + shape_str(x.shape()));
    }
    return d;
}

// Row-major column matrix [C*9, N*OH*OW]; columns for sample n occupy the
// contiguous block [n*OH*OW, (n+1)*OH*OW).
std::shared_ptr<std::vector<Real>> im2col(const Tensor& x, const ConvDims& d, int stride, int pad) {
    const int cols = d.n * d.oh * d.ow;
    auto buf = std::make_shared<std::vector<Real>>(static_cast<size_t>(d.c) * 9 * cols, Real{0});
    auto xd = x.data();
    for (int c = 0; c < d.c; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                Real* row = buf->data() + (static_cast<size_t>(c) * 9 + ky * 3 + kx) * cols;
                for (int n = 0; n < d.n; ++n) {
                    const Real* xn = xd.data() + (static_cast<size_t>(n) * d.c + c) * d.h * d.w;
                    Real* dst = row + static_cast<size_t>(n) * d.oh * d.ow;
                    for (int oy = 0; oy < d.oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (int ox = 0; ox < d.ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= d.w) continue;
                            dst[oy * d.ow + ox] = xn[iy * d.w + ix];
                        }
                    }
                }
            }
        }
    }
    return buf;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad, Tape* tape) {
    const ConvDims d = conv_dims(x, k, stride, pad);
    const int hw = d.oh * d.ow;
    Tensor out = Tensor::zeros({d.n, d.f, d.oh, d.ow});

    auto col = im2col(x, d, stride, pad);
    {
        ConstMap km(k.data().data(), d.f, d.c * 9);
        ConstMap colm(col->data(), d.c * 9, d.n * hw);
        for (int n = 0; n < d.n; ++n) {
            MutMap on(out.mutable_data().data() + static_cast<size_t>(n) * d.f * hw, d.f, hw);
            on.noalias() = km * colm.middleCols(n * hw, hw);
        }
    }

    maybe_record(tape, {x, k}, out, [&](const std::vector<bool>& needs) {
        Tensor tx = x, tk = k, to = out;
        bool gx = needs[0], gk = needs[1];
        // The column matrix is only needed for the kernel gradient.
        auto saved_col = gk ? col : nullptr;
        return [tx, tk, to, gx, gk, saved_col, d, hw, stride, pad]() mutable {
            if (gk) {
                ConstMap colm(saved_col->data(), d.c * 9, d.n * hw);
                MutMap gkm(tk.grad_mut().data(), d.f, d.c * 9);
                for (int n = 0; n < d.n; ++n) {
                    ConstMap gon(to.grad().data() + static_cast<size_t>(n) * d.f * hw, d.f, hw);
                    gkm.noalias() += gon * colm.middleCols(n * hw, hw).transpose();
                }
            }
            if (gx) {
                ConstMap km(tk.data().data(), d.f, d.c * 9);
                auto gxd = tx.grad_mut();
                RowMat colgrad(d.c * 9, hw);
                for (int n = 0; n < d.n; ++n) {
                    ConstMap gon(to.grad().data() + static_cast<size_t>(n) * d.f * hw, d.f, hw);
                    colgrad.noalias() = km.transpose() * gon;
                    // col2im scatter-add
                    for (int c = 0; c < d.c; ++c) {
                        Real* gxn = gxd.data() + (static_cast<size_t>(n) * d.c + c) * d.h * d.w;
                        for (int ky = 0; ky < 3; ++ky) {
                            for (int kx = 0; kx < 3; ++kx) {
                                const Real* src = colgrad.data() +
                                                  (static_cast<size_t>(c) * 9 + ky * 3 + kx) * hw;
                                for (int oy = 0; oy < d.oh; ++oy) {
                                    const int iy = oy * stride + ky - pad;
                                    if (iy < 0 || iy >= d.h) continue;
                                    for (int ox = 0; ox < d.ow; ++ox) {
                                        const int ix = ox * stride + kx - pad;
                                        if (ix < 0 || ix >= d.w) continue;
                                        gxn[iy * d.w + ix] += src[oy * d.ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    });
    return out;
}

Tensor relu(const Tensor& x, Tape* tape) {
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.mutable_data();
    for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > Real{0} ? xd[i] : Real{0};
    maybe_record(tape, {x}, out, [&](const std::vector<bool>&) {
        Tensor tx = x, to = out;
        return [tx, to]() mutable {
            auto go = to.grad();
            auto gx = tx.grad_mut();
            auto xd = tx.data();
            for (size_t i = 0; i < xd.size(); ++i) {
                if (xd[i] > Real{0}) gx[i] += go[i];
            }
        };
    });
    return out;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.mutable_data();
    for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] + bd[i];
    maybe_record(tape, {a, b}, out, [&](const std::vector<bool>& needs) {
        Tensor ta = a, tb = b, to = out;
        bool ga = needs[0], gb = needs[1];
        return [ta, tb, to, ga, gb]() mutable {
            auto go = to.grad();
            if (ga) {
                auto g = ta.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
            }
            if (gb) {
                auto g = tb.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
            }
        };
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.mutable_data();
    for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * bd[i];
    maybe_record(tape, {a, b}, out, [&](const std::vector<bool>& needs) {
        Tensor ta = a, tb = b, to = out;
        bool ga = needs[0], gb = needs[1];
        return [ta, tb, to, ga, gb]() mutable {
            auto go = to.grad();
            auto ad = ta.data();
            auto bd = tb.data();
            if (ga) {
                auto g = ta.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bd[i];
            }
            if (gb) {
                auto g = tb.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * ad[i];
            }
        };
    });
    return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
    double acc = 0.0;
    for (Real v : x.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<Real>(acc));
    maybe_record(tape, {x}, out, [&](const std::vector<bool>&) {
        Tensor tx = x, to = out;
        return [tx, to]() mutable {
            const Real go = to.grad()[0];
            auto g = tx.grad_mut();
            for (size_t i = 0; i < g.size(); ++i) g[i] += go;
        };
    });
    return out;
}

Tensor reshape(const Tensor& x, Shape new_shape, Tape* tape) {
    if (numel(new_shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    }
    Tensor out = Tensor::from_data(std::move(new_shape),
                                   std::vector<Real>(x.data().begin(), x.data().end()));
    maybe_record(tape, {x}, out, [&](const std::vector<bool>&) {
        Tensor tx = x, to = out;
        return [tx, to]() mutable {
            auto go = to.grad();
            auto g = tx.grad_mut();
            for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
        };
    });
    return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& b, Tape* tape) {
    check_2d(x, "add_row_bias input");
    if (b.ndim() != 1 || b.dim(0) != x.dim(1)) {
        throw ShapeError("add_row_bias: bias " + shape_str(b.shape()) + " does not match " +
                         shape_str(x.shape()));
    }
    const int n = x.dim(0), dcol = x.dim(1);
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto bd = b.data();
    auto od = out.mutable_data();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < dcol; ++j) od[i * dcol + j] = xd[i * dcol + j] + bd[j];
    }
    maybe_record(tape, {x, b}, out, [&](const std::vector<bool>& needs) {
        Tensor tx = x, tb = b, to = out;
        bool gx = needs[0], gb = needs[1];
        return [tx, tb, to, gx, gb, n, dcol]() mutable {
            auto go = to.grad();
            if (gx) {
                auto g = tx.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
            }
            if (gb) {
                auto g = tb.grad_mut();
                for (int j = 0; j < dcol; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += go[i * dcol + j];
                    g[j] += static_cast<Real>(acc);
                }
            }
        };
    });
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b, Tape* tape) {
    if (x.ndim() != 4) {
        throw ShapeError("add_channel_bias input must be 4-d, got " + shape_str(x.shape()));
    }
    if (b.ndim() != 1 || b.dim(0) != x.dim(1)) {
        throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) + " does not match " +
                         shape_str(x.shape()));
    }
    const int n = x.dim(0), c = x.dim(1);
    const int hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto bd = b.data();
    auto od = out.mutable_data();
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const size_t base = (static_cast<size_t>(i) * c + ch) * hw;
            for (int p = 0; p < hw; ++p) od[base + p] = xd[base + p] + bd[ch];
        }
    }
    maybe_record(tape, {x, b}, out, [&](const std::vector<bool>& needs) {
        Tensor tx = x, tb = b, to = out;
        bool gx = needs[0], gb = needs[1];
        return [tx, tb, to, gx, gb, n, c, hw]() mutable {
            auto go = to.grad();
            if (gx) {
                auto g = tx.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
            }
            if (gb) {
                auto g = tb.grad_mut();
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const size_t base = (static_cast<size_t>(i) * c + ch) * hw;
                        for (int p = 0; p < hw; ++p) acc += go[base + p];
                    }
                    g[ch] += static_cast<Real>(acc);
                }
            }
        };
    });
    return out;
}

namespace {

// Row-stabilized probabilities; shared by softmax / cross-entropy.
Tensor softmax_impl(const Tensor& logits) {
    check_2d(logits, "softmax logits");
    const int n = logits.dim(0), c = logits.dim(1);
    Tensor probs = Tensor::zeros(logits.shape());
    auto ld = logits.data();
    auto pd = probs.mutable_data();
    for (int i = 0; i < n; ++i) {
        const Real* row = ld.data() + static_cast<size_t>(i) * c;
        Real m = row[0];
        for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(row[j]) - m);
            pd[static_cast<size_t>(i) * c + j] = static_cast<Real>(e);
            z += e;
        }
        for (int j = 0; j < c; ++j) {
            pd[static_cast<size_t>(i) * c + j] = static_cast<Real>(pd[static_cast<size_t>(i) * c + j] / z);
        }
    }
    return probs;
}

}  // namespace

Tensor softmax(const Tensor& logits) { return softmax_impl(logits); }

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tape* tape) {
    check_2d(logits, "cross-entropy logits");
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= c) {
            throw IndexError("label " + std::to_string(labels[i]) + " outside [0, " +
                             std::to_string(c) + ") at row " + std::to_string(i));
        }
    }
    Tensor probs = softmax_impl(logits);
    auto pd = probs.data();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        // -log p clipped away from the denormal floor; p==0 cannot occur for
        // finite logits since the true-class exp is included in the row sum.
        acc += -std::log(static_cast<double>(pd[static_cast<size_t>(i) * c + labels[i]]));
    }
    Tensor out = Tensor::scalar(static_cast<Real>(acc / n));
    maybe_record(tape, {logits}, out, [&](const std::vector<bool>&) {
        Tensor tl = logits, to = out;
        Tensor saved_probs = probs;
        std::vector<int> y = labels;
        return [tl, to, saved_probs, y, n, c]() mutable {
            const Real go = to.grad()[0];
            auto g = tl.grad_mut();
            auto pd = saved_probs.data();
            const Real inv_n = Real{1} / static_cast<Real>(n);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < c; ++j) {
                    const Real onehot = (j == y[i]) ? Real{1} : Real{0};
                    g[static_cast<size_t>(i) * c + j] +=
                        go * (pd[static_cast<size_t>(i) * c + j] - onehot) * inv_n;
                }
            }
        };
    });
    return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape) {
    check_same_shape(pred, target, "mse_loss");
    auto pd = pred.data();
    auto td = target.data();
    double acc = 0.0;
    for (size_t i = 0; i < pd.size(); ++i) {
        const double diff = static_cast<double>(pd[i]) - static_cast<double>(td[i]);
        acc += diff * diff;
    }
    Tensor out = Tensor::scalar(static_cast<Real>(acc / static_cast<double>(pd.size())));
    maybe_record(tape, {pred, target}, out, [&](const std::vector<bool>& needs) {
        Tensor tp = pred, tt = target, to = out;
        bool gp = needs[0], gt = needs[1];
        return [tp, tt, to, gp, gt]() mutable {
            const Real go = to.grad()[0];
            auto pd = tp.data();
            auto td = tt.data();
            const Real scale = Real{2} / static_cast<Real>(pd.size());
            if (gp) {
                auto g = tp.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] += go * scale * (pd[i] - td[i]);
            }
            if (gt) {
                auto g = tt.grad_mut();
                for (size_t i = 0; i < g.size(); ++i) g[i] -= go * scale * (pd[i] - td[i]);
            }
        };
    });
    return out;
}

std::vector<double> mse_per_sample(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_per_sample");
    check_2d(pred, "mse_per_sample input");
    const int n = pred.dim(0), d = pred.dim(1);
    auto pd = pred.data();
    auto td = target.data();
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            const size_t k = static_cast<size_t>(i) * d + j;
            const double diff = static_cast<double>(pd[k]) - static_cast<double>(td[k]);
            acc += diff * diff;
        }
        out[static_cast<size_t>(i)] = acc / d;
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    check_2d(logits, "argmax input");
    const int n = logits.dim(0), c = logits.dim(1);
    auto ld = logits.data();
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Real* row = ld.data() + static_cast<size_t>(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

}  // namespace lr
