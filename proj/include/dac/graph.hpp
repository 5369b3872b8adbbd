#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "dac/param_store.hpp"
#include "dac/tensor.hpp"

namespace dac {

// Reverse-mode autodiff over a dynamically recorded op tape. Ops evaluate
// eagerly; each records a closure that routes the output gradient to its
// inputs. One graph per batch item; graphs share a read-only ParamStore and
// harvest leaf gradients into it afterwards (in item order, so results match
// the sequential schedule bit for bit).
template <typename T>
class Graph {
public:
    using NodeId = int;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // ---- leaves ------------------------------------------------------------

    NodeId constant(Tensor<T> v, const char* op = "constant") {
        return push(std::move(v), op, /*requires_grad=*/false, {});
    }

    NodeId param(ParamStore<T>& store, int index) {
        DAC_CHECK(store_ == nullptr || store_ == &store, "graph bound to a different ParamStore");
        store_ = &store;
        NodeId id = push_external(&store[index].value, "param");
        param_leaves_.push_back({id, index});
        return id;
    }

    NodeId param(ParamStore<T>& store, const std::string& name) {
        int idx = store.find(name);
        DAC_CHECK(idx >= 0, "unknown parameter '", name, "'");
        return param(store, idx);
    }

    // ---- ops ---------------------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        DAC_CHECK(A.ndim() == 2 && B.ndim() == 2 && A.cols() == B.rows(),
                  "matmul dimension error: ", A.shape_str(), " x ", B.shape_str());
        Tensor<T> out({A.rows(), B.cols()});
        mat(out).noalias() = cmat(A) * cmat(B);
        return push(std::move(out), "matmul", needs(a) || needs(b), [this, a, b](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            if (needs(a)) mat(grad_buf(a)).noalias() += cmat(G) * cmat(val(b)).transpose();
            if (needs(b)) mat(grad_buf(b)).noalias() += cmat(val(a)).transpose() * cmat(G);
        });
    }

    NodeId transpose(NodeId x) {
        const Tensor<T>& X = val(x);
        DAC_CHECK(X.ndim() == 2, "transpose expects a matrix, got ", X.shape_str());
        Tensor<T> out({X.cols(), X.rows()});
        mat(out) = cmat(X).transpose();
        return push(std::move(out), "transpose", needs(x), [this, x](NodeId o) {
            mat(grad_buf(x)) += cmat(nodes_[o].grad).transpose();
        });
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        DAC_CHECK(A.same_shape(B), "add shape mismatch: ", A.shape_str(), " vs ", B.shape_str());
        Tensor<T> out = A;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
        return push(std::move(out), "add", needs(a) || needs(b), [this, a, b](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            if (needs(a)) axpy(grad_buf(a), G, T(1));
            if (needs(b)) axpy(grad_buf(b), G, T(1));
        });
    }

    // x: [R x D], row: D values broadcast over rows (bias / time embedding).
    NodeId add_row(NodeId x, NodeId row) {
        const Tensor<T>& X = val(x);
        const Tensor<T>& R = val(row);
        DAC_CHECK(X.ndim() == 2 && R.numel() == X.cols(),
                  "add_row: ", X.shape_str(), " + ", R.shape_str());
        Tensor<T> out = X;
        int64_t rows = X.rows(), cols = X.cols();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) out.data[r * cols + c] += R.data[c];
        return push(std::move(out), "add_row", needs(x) || needs(row), [this, x, row](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            int64_t rows = G.rows(), cols = G.cols();
            if (needs(x)) axpy(grad_buf(x), G, T(1));
            if (needs(row)) {
                Tensor<T>& gr = grad_buf(row);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) gr.data[c] += G.data[r * cols + c];
            }
        });
    }

    NodeId scale(NodeId x, T c) {
        Tensor<T> out = val(x);
        for (auto& v : out.data) v *= c;
        return push(std::move(out), "scale", needs(x), [this, x, c](NodeId o) {
            axpy(grad_buf(x), nodes_[o].grad, c);
        });
    }

    // sum_i weights[i] * terms[i], all same shape.
    NodeId weighted_sum(const std::vector<NodeId>& terms, const std::vector<T>& weights) {
        DAC_CHECK(!terms.empty() && terms.size() == weights.size(), "weighted_sum arity mismatch");
        Tensor<T> out = Tensor<T>::zeros(val(terms[0]).shape);
        bool req = false;
        for (size_t k = 0; k < terms.size(); ++k) {
            const Tensor<T>& V = val(terms[k]);
            DAC_CHECK(V.same_shape(out), "weighted_sum shape mismatch: ", V.shape_str(), " vs ",
                      out.shape_str());
            for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += weights[k] * V.data[i];
            req = req || needs(terms[k]);
        }
        auto ts = terms;
        auto ws = weights;
        return push(std::move(out), "weighted_sum", req, [this, ts, ws](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            for (size_t k = 0; k < ts.size(); ++k)
                if (needs(ts[k])) axpy(grad_buf(ts[k]), G, ws[k]);
        });
    }

    NodeId gelu(NodeId x) {
        const Tensor<T>& X = val(x);
        Tensor<T> out = X;
        for (auto& v : out.data) v = gelu_fwd(v);
        return push(std::move(out), "gelu", needs(x), [this, x](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            const Tensor<T>& X2 = val(x);
            Tensor<T>& gx = grad_buf(x);
            for (int64_t i = 0; i < G.numel(); ++i) gx.data[i] += G.data[i] * gelu_bwd(X2.data[i]);
        });
    }

    // Max-subtracted softmax along `axis`.
    NodeId softmax(NodeId x, int axis) {
        const Tensor<T>& X = val(x);
        DAC_CHECK(axis >= 0 && axis < X.ndim(), "softmax axis ", axis, " out of range for ",
                  X.shape_str());
        Tensor<T> out = X;
        int64_t n = X.dim(axis);
        int64_t inner = 1;
        for (int i = axis + 1; i < X.ndim(); ++i) inner *= X.dim(i);
        int64_t outer = X.numel() / (n * inner);
        for (int64_t ot = 0; ot < outer; ++ot) {
            for (int64_t in = 0; in < inner; ++in) {
                int64_t base = ot * n * inner + in;
                T mx = out.data[base];
                for (int64_t k = 1; k < n; ++k) mx = std::max(mx, out.data[base + k * inner]);
                T sum = T(0);
                for (int64_t k = 0; k < n; ++k) {
                    T e = std::exp(out.data[base + k * inner] - mx);
                    out.data[base + k * inner] = e;
                    sum += e;
                }
                for (int64_t k = 0; k < n; ++k) out.data[base + k * inner] /= sum;
            }
        }
        NodeId id = push(std::move(out), "softmax", needs(x), {});
        if (needs(x)) {
            nodes_[id].back = [this, x, axis, n, inner](NodeId o) {
                const Tensor<T>& Y = nodes_[o].owned;
                const Tensor<T>& G = nodes_[o].grad;
                Tensor<T>& gx = grad_buf(x);
                int64_t outer2 = Y.numel() / (n * inner);
                for (int64_t ot = 0; ot < outer2; ++ot) {
                    for (int64_t in = 0; in < inner; ++in) {
                        int64_t base = ot * n * inner + in;
                        T dot = T(0);
                        for (int64_t k = 0; k < n; ++k)
                            dot += G.data[base + k * inner] * Y.data[base + k * inner];
                        for (int64_t k = 0; k < n; ++k) {
                            int64_t idx = base + k * inner;
                            gx.data[idx] += Y.data[idx] * (G.data[idx] - dot);
                        }
                    }
                }
            };
        }
        return id;
    }

    // Per-row normalization over the last axis, then affine-transform by
    // gain/bias of length D.
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps = T(1e-5)) {
        const Tensor<T>& X = val(x);
        const Tensor<T>& Gn = val(gain);
        const Tensor<T>& Bs = val(bias);
        DAC_CHECK(X.ndim() >= 1, "layer_norm on empty tensor");
        int64_t d = X.dim(X.ndim() - 1);
        DAC_CHECK(d >= 1 && eps > T(0), "layer_norm requires D >= 1 and eps > 0");
        DAC_CHECK(Gn.numel() == d && Bs.numel() == d, "layer_norm gain/bias must have length ", d);
        int64_t rows = X.numel() / d;
        Tensor<T> out = X;
        Tensor<T> xhat({rows, d});
        std::vector<T> inv_std(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = &X.data[r * d];
            T mean = T(0);
            for (int64_t c = 0; c < d; ++c) mean += xr[c];
            mean /= static_cast<T>(d);
            T var = T(0);
            for (int64_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
            var /= static_cast<T>(d);
            T istd = T(1) / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(r)] = istd;
            for (int64_t c = 0; c < d; ++c) {
                T xh = (xr[c] - mean) * istd;
                xhat.data[r * d + c] = xh;
                out.data[r * d + c] = Gn.data[c] * xh + Bs.data[c];
            }
        }
        bool req = needs(x) || needs(gain) || needs(bias);
        return push(std::move(out), "layer_norm", req,
                    [this, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), d](NodeId o) {
                        const Tensor<T>& G = nodes_[o].grad;
                        const Tensor<T>& Gn2 = val(gain);
                        int64_t rows = G.numel() / d;
                        for (int64_t r = 0; r < rows; ++r) {
                            const T* g = &G.data[r * d];
                            const T* xh = &xhat.data[r * d];
                            if (needs(gain)) {
                                Tensor<T>& gg = grad_buf(gain);
                                for (int64_t c = 0; c < d; ++c) gg.data[c] += g[c] * xh[c];
                            }
                            if (needs(bias)) {
                                Tensor<T>& gb = grad_buf(bias);
                                for (int64_t c = 0; c < d; ++c) gb.data[c] += g[c];
                            }
                            if (needs(x)) {
                                Tensor<T>& gx = grad_buf(x);
                                T mean_dy = T(0), mean_dyxh = T(0);
                                for (int64_t c = 0; c < d; ++c) {
                                    T dyh = g[c] * Gn2.data[c];
                                    mean_dy += dyh;
                                    mean_dyxh += dyh * xh[c];
                                }
                                mean_dy /= static_cast<T>(d);
                                mean_dyxh /= static_cast<T>(d);
                                T istd = inv_std[static_cast<size_t>(r)];
                                for (int64_t c = 0; c < d; ++c) {
                                    T dyh = g[c] * Gn2.data[c];
                                    gx.data[r * d + c] += istd * (dyh - mean_dy - xh[c] * mean_dyxh);
                                }
                            }
                        }
                    });
    }

    // Row gather: out[i] = table[ids[i]].
    NodeId embedding(NodeId table, std::vector<int> ids) {
        const Tensor<T>& E = val(table);
        DAC_CHECK(E.ndim() == 2, "embedding table must be 2-D, got ", E.shape_str());
        int64_t v = E.rows(), d = E.cols();
        Tensor<T> out({static_cast<int64_t>(ids.size()), d});
        for (size_t i = 0; i < ids.size(); ++i) {
            DAC_CHECK(ids[i] >= 0 && ids[i] < v, "embedding id ", ids[i], " out of range [0,", v, ")");
            std::copy_n(&E.data[static_cast<int64_t>(ids[i]) * d], d, &out.data[static_cast<int64_t>(i) * d]);
        }
        return push(std::move(out), "embedding", needs(table),
                    [this, table, ids = std::move(ids), d](NodeId o) {
                        const Tensor<T>& G = nodes_[o].grad;
                        Tensor<T>& gt = grad_buf(table);
                        for (size_t i = 0; i < ids.size(); ++i)
                            for (int64_t c = 0; c < d; ++c)
                                gt.data[static_cast<int64_t>(ids[i]) * d + c] +=
                                    G.data[static_cast<int64_t>(i) * d + c];
                    });
    }

    NodeId slice_cols(NodeId x, int64_t c0, int64_t c1) {
        const Tensor<T>& X = val(x);
        DAC_CHECK(X.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= X.cols(), "slice_cols [", c0, ",", c1,
                  ") invalid for ", X.shape_str());
        int64_t rows = X.rows(), cols = X.cols(), w = c1 - c0;
        Tensor<T> out({rows, w});
        for (int64_t r = 0; r < rows; ++r)
            std::copy_n(&X.data[r * cols + c0], w, &out.data[r * w]);
        return push(std::move(out), "slice_cols", needs(x), [this, x, c0, w](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            Tensor<T>& gx = grad_buf(x);
            int64_t rows = G.rows(), cols = gx.cols();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < w; ++c) gx.data[r * cols + c0 + c] += G.data[r * w + c];
        });
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        DAC_CHECK(A.ndim() == 2 && B.ndim() == 2 && A.rows() == B.rows(),
                  "concat_cols row mismatch: ", A.shape_str(), " vs ", B.shape_str());
        int64_t rows = A.rows(), ca = A.cols(), cb = B.cols();
        Tensor<T> out({rows, ca + cb});
        for (int64_t r = 0; r < rows; ++r) {
            std::copy_n(&A.data[r * ca], ca, &out.data[r * (ca + cb)]);
            std::copy_n(&B.data[r * cb], cb, &out.data[r * (ca + cb) + ca]);
        }
        return push(std::move(out), "concat_cols", needs(a) || needs(b), [this, a, b, ca, cb](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            int64_t rows = G.rows();
            if (needs(a)) {
                Tensor<T>& ga = grad_buf(a);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < ca; ++c) ga.data[r * ca + c] += G.data[r * (ca + cb) + c];
            }
            if (needs(b)) {
                Tensor<T>& gb = grad_buf(b);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cb; ++c)
                        gb.data[r * cb + c] += G.data[r * (ca + cb) + ca + c];
            }
        });
    }

    // x: [Ci,H,W], w: [Co,Ci,k,k], b: [Co]; zero padding `pad`, square stride.
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
        const Tensor<T>& X = val(x);
        const Tensor<T>& W = val(w);
        const Tensor<T>& B = val(b);
        DAC_CHECK(X.ndim() == 3 && W.ndim() == 4 && W.dim(1) == X.dim(0),
                  "conv2d shape error: x ", X.shape_str(), " w ", W.shape_str());
        int64_t ci = X.dim(0), h = X.dim(1), wd = X.dim(2);
        int64_t co = W.dim(0), k = W.dim(2);
        DAC_CHECK(B.numel() == co, "conv2d bias length ", B.numel(), " != ", co);
        int64_t ho = (h + 2 * pad - k) / stride + 1;
        int64_t wo = (wd + 2 * pad - k) / stride + 1;
        Tensor<T> out({co, ho, wo});
        auto xat = [&](int64_t c, int64_t i, int64_t j) -> T {
            if (i < 0 || i >= h || j < 0 || j >= wd) return T(0);
            return X.data[(c * h + i) * wd + j];
        };
        for (int64_t oc = 0; oc < co; ++oc)
            for (int64_t oi = 0; oi < ho; ++oi)
                for (int64_t oj = 0; oj < wo; ++oj) {
                    T acc = B.data[oc];
                    for (int64_t ic = 0; ic < ci; ++ic)
                        for (int64_t di = 0; di < k; ++di)
                            for (int64_t dj = 0; dj < k; ++dj)
                                acc += W.data[((oc * ci + ic) * k + di) * k + dj] *
                                       xat(ic, oi * stride + di - pad, oj * stride + dj - pad);
                    out.data[(oc * ho + oi) * wo + oj] = acc;
                }
        bool req = needs(x) || needs(w) || needs(b);
        return push(std::move(out), "conv2d", req, [this, x, w, b, stride, pad](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            const Tensor<T>& X2 = val(x);
            const Tensor<T>& W2 = val(w);
            int64_t ci = X2.dim(0), h = X2.dim(1), wd = X2.dim(2);
            int64_t co = W2.dim(0), k = W2.dim(2);
            int64_t ho = G.dim(1), wo = G.dim(2);
            T* gw = needs(w) ? grad_buf(w).data.data() : nullptr;
            T* gx = needs(x) ? grad_buf(x).data.data() : nullptr;
            T* gb = needs(b) ? grad_buf(b).data.data() : nullptr;
            for (int64_t oc = 0; oc < co; ++oc)
                for (int64_t oi = 0; oi < ho; ++oi)
                    for (int64_t oj = 0; oj < wo; ++oj) {
                        T g = G.data[(oc * ho + oi) * wo + oj];
                        if (gb) gb[oc] += g;
                        for (int64_t ic = 0; ic < ci; ++ic)
                            for (int64_t di = 0; di < k; ++di)
                                for (int64_t dj = 0; dj < k; ++dj) {
                                    int64_t xi = oi * stride + di - pad;
                                    int64_t xj = oj * stride + dj - pad;
                                    if (xi < 0 || xi >= h || xj < 0 || xj >= wd) continue;
                                    if (gw)
                                        gw[((oc * ci + ic) * k + di) * k + dj] +=
                                            g * X2.data[(ic * h + xi) * wd + xj];
                                    if (gx)
                                        gx[(ic * h + xi) * wd + xj] +=
                                            g * W2.data[((oc * ci + ic) * k + di) * k + dj];
                                }
                    }
        });
    }

    // [C,H,W] -> [H, C*W]: one row per time frame with channels flattened.
    NodeId flatten_chw(NodeId x) {
        const Tensor<T>& X = val(x);
        DAC_CHECK(X.ndim() == 3, "flatten_chw expects [C,H,W], got ", X.shape_str());
        int64_t c = X.dim(0), h = X.dim(1), w = X.dim(2);
        Tensor<T> out({h, c * w});
        for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t ih = 0; ih < h; ++ih)
                for (int64_t iw = 0; iw < w; ++iw)
                    out.data[ih * c * w + ic * w + iw] = X.data[(ic * h + ih) * w + iw];
        return push(std::move(out), "flatten_chw", needs(x), [this, x, c, h, w](NodeId o) {
            const Tensor<T>& G = nodes_[o].grad;
            Tensor<T>& gx = grad_buf(x);
            for (int64_t ic = 0; ic < c; ++ic)
                for (int64_t ih = 0; ih < h; ++ih)
                    for (int64_t iw = 0; iw < w; ++iw)
                        gx.data[(ic * h + ih) * w + iw] += G.data[ih * c * w + ic * w + iw];
        });
    }

    NodeId sum(NodeId x) {
        const Tensor<T>& X = val(x);
        T acc = T(0);
        for (T v : X.data) acc += v;
        Tensor<T> out({1});
        out.data[0] = acc;
        return push(std::move(out), "sum", needs(x), [this, x](NodeId o) {
            T g = nodes_[o].grad.data[0];
            Tensor<T>& gx = grad_buf(x);
            for (auto& v : gx.data) v += g;
        });
    }

    // Mean squared difference over entries of rows where mask is true.
    NodeId mse_masked(NodeId a, NodeId b, std::vector<uint8_t> row_mask) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        DAC_CHECK(A.same_shape(B), "mse shape mismatch: ", A.shape_str(), " vs ", B.shape_str());
        DAC_CHECK(A.ndim() == 2 && static_cast<int64_t>(row_mask.size()) == A.rows(),
                  "mse mask length ", row_mask.size(), " != rows ", A.rows());
        int64_t rows = A.rows(), d = A.cols(), nvalid = 0;
        for (uint8_t m : row_mask) nvalid += m ? 1 : 0;
        DAC_CHECK(nvalid > 0, "no valid positions");
        T n = static_cast<T>(nvalid * d);
        T acc = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            if (!row_mask[static_cast<size_t>(r)]) continue;
            for (int64_t c = 0; c < d; ++c) {
                T diff = A.data[r * d + c] - B.data[r * d + c];
                acc += diff * diff;
            }
        }
        Tensor<T> out({1});
        out.data[0] = acc / n;
        return push(std::move(out), "mse_masked", needs(a) || needs(b),
                    [this, a, b, row_mask = std::move(row_mask), n](NodeId o) {
                        T g = nodes_[o].grad.data[0];
                        const Tensor<T>& A2 = val(a);
                        const Tensor<T>& B2 = val(b);
                        int64_t rows = A2.rows(), d = A2.cols();
                        for (int64_t r = 0; r < rows; ++r) {
                            if (!row_mask[static_cast<size_t>(r)]) continue;
                            for (int64_t c = 0; c < d; ++c) {
                                T dv = T(2) * (A2.data[r * d + c] - B2.data[r * d + c]) / n * g;
                                if (needs(a)) grad_buf(a).data[r * d + c] += dv;
                                if (needs(b)) grad_buf(b).data[r * d + c] -= dv;
                            }
                        }
                    });
    }

    // Mean negative log-softmax probability of targets over masked positions.
    NodeId cross_entropy(NodeId logits, std::vector<int> targets, std::vector<uint8_t> mask) {
        const Tensor<T>& L = val(logits);
        DAC_CHECK(L.ndim() == 2, "cross_entropy expects [L x V] logits, got ", L.shape_str());
        int64_t rows = L.rows(), v = L.cols();
        DAC_CHECK(static_cast<int64_t>(targets.size()) == rows &&
                      static_cast<int64_t>(mask.size()) == rows,
                  "cross_entropy targets/mask length mismatch");
        int64_t nvalid = 0;
        for (uint8_t m : mask) nvalid += m ? 1 : 0;
        DAC_CHECK(nvalid > 0, "no valid positions");
        // Cache the softmax rows for the backward pass.
        Tensor<T> probs({rows, v});
        T acc = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            const T* lr = &L.data[r * v];
            T mx = lr[0];
            for (int64_t c = 1; c < v; ++c) mx = std::max(mx, lr[c]);
            T sum = T(0);
            for (int64_t c = 0; c < v; ++c) {
                T e = std::exp(lr[c] - mx);
                probs.data[r * v + c] = e;
                sum += e;
            }
            for (int64_t c = 0; c < v; ++c) probs.data[r * v + c] /= sum;
            if (mask[static_cast<size_t>(r)]) {
                int tgt = targets[static_cast<size_t>(r)];
                DAC_CHECK(tgt >= 0 && tgt < v, "cross_entropy target ", tgt, " out of range [0,", v, ")");
                acc -= std::log(probs.data[r * v + tgt]);
            }
        }
        Tensor<T> out({1});
        out.data[0] = acc / static_cast<T>(nvalid);
        return push(std::move(out), "cross_entropy", needs(logits),
                    [this, logits, targets = std::move(targets), mask = std::move(mask),
                     probs = std::move(probs), nvalid](NodeId o) {
                        T g = nodes_[o].grad.data[0] / static_cast<T>(nvalid);
                        Tensor<T>& gl = grad_buf(logits);
                        int64_t rows = gl.rows(), v = gl.cols();
                        for (int64_t r = 0; r < rows; ++r) {
                            if (!mask[static_cast<size_t>(r)]) continue;
                            for (int64_t c = 0; c < v; ++c) {
                                T p = probs.data[r * v + c];
                                T y = (c == targets[static_cast<size_t>(r)]) ? T(1) : T(0);
                                gl.data[r * v + c] += (p - y) * g;
                            }
                        }
                    });
    }

    // Mean binary cross-entropy of logits z against {0,1} targets.
    NodeId bce_logits(NodeId z, std::vector<uint8_t> targets) {
        const Tensor<T>& Z = val(z);
        DAC_CHECK(Z.numel() == static_cast<int64_t>(targets.size()),
                  "bce targets length ", targets.size(), " != ", Z.numel());
        int64_t n = Z.numel();
        T acc = T(0);
        for (int64_t i = 0; i < n; ++i) {
            T zi = Z.data[i];
            T y = targets[static_cast<size_t>(i)] ? T(1) : T(0);
            acc += std::max(zi, T(0)) - zi * y + std::log1p(std::exp(-std::abs(zi)));
        }
        Tensor<T> out({1});
        out.data[0] = acc / static_cast<T>(n);
        return push(std::move(out), "bce_logits", needs(z),
                    [this, z, targets = std::move(targets), n](NodeId o) {
                        T g = nodes_[o].grad.data[0] / static_cast<T>(n);
                        const Tensor<T>& Z2 = val(z);
                        Tensor<T>& gz = grad_buf(z);
                        for (int64_t i = 0; i < n; ++i) {
                            T s = T(1) / (T(1) + std::exp(-Z2.data[i]));
                            T y = targets[static_cast<size_t>(i)] ? T(1) : T(0);
                            gz.data[i] += (s - y) * g;
                        }
                    });
    }

    // ---- access & backward ---------------------------------------------------

    const Tensor<T>& value(NodeId id) const { return val(id); }

    const Tensor<T>& grad(NodeId id) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (nd.grad.numel() == 0) nd.grad = Tensor<T>::zeros(val(id).shape);
        return nd.grad;
    }

    // Computes d(loss)/d(node) for every contributing node, then adds the
    // param-leaf gradients into the bound ParamStore. Repeated calls
    // accumulate into the store.
    void backward(NodeId loss, bool accumulate_into_store = true) {
        DAC_CHECK(val(loss).numel() == 1, "backward requires a scalar loss, got ",
                  val(loss).shape_str());
        for (auto& nd : nodes_) {
            if (nd.grad.numel() != 0) std::fill(nd.grad.data.begin(), nd.grad.data.end(), T(0));
        }
        grad_buf(loss).data[0] = T(1);
        for (NodeId id = loss; id >= 0; --id) {
            Node& nd = nodes_[static_cast<size_t>(id)];
            if (nd.grad.numel() != 0 && nd.back) nd.back(id);
        }
        if (accumulate_into_store) accumulate_param_grads();
    }

    // Adds leaf gradients into the bound store (call once per graph after
    // backward(loss, false); in item order when batching).
    void accumulate_param_grads() {
        for (auto [id, idx] : param_leaves_) {
            Node& nd = nodes_[static_cast<size_t>(id)];
            if (nd.grad.numel() == 0) continue;
            Tensor<T>& dst = (*store_)[idx].grad;
            for (int64_t i = 0; i < dst.numel(); ++i) dst.data[i] += nd.grad.data[i];
        }
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* ext = nullptr;
        Tensor<T> grad;
        std::function<void(NodeId)> back;
        const char* op = "";
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<NodeId, int>> param_leaves_;
    ParamStore<T>* store_ = nullptr;

    const Tensor<T>& val(NodeId id) const {
        const Node& nd = nodes_[static_cast<size_t>(id)];
        return nd.ext ? *nd.ext : nd.owned;
    }

    bool needs(NodeId id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    Tensor<T>& grad_buf(NodeId id) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (nd.grad.numel() == 0) nd.grad = Tensor<T>::zeros(val(id).shape);
        return nd.grad;
    }

    NodeId push(Tensor<T> value, const char* op, bool requires_grad,
                std::function<void(NodeId)> back) {
        DAC_CHECK(value.all_finite(), "non-finite value produced by op '", op, "'");
        Node nd;
        nd.owned = std::move(value);
        nd.op = op;
        nd.requires_grad = requires_grad;
        if (requires_grad) nd.back = std::move(back);
        nodes_.push_back(std::move(nd));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    NodeId push_external(const Tensor<T>* value, const char* op) {
        DAC_CHECK(value->all_finite(), "non-finite value in '", op, "'");
        Node nd;
        nd.ext = value;
        nd.op = op;
        nd.requires_grad = true;
        nodes_.push_back(std::move(nd));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    // Eigen views over row-major buffers; GEMM goes through Eigen, everything
    // else is explicit loops.
    using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    static Eigen::Map<EigenMat> mat(Tensor<T>& t) {
        return Eigen::Map<EigenMat>(t.data.data(), t.rows(), t.cols());
    }
    static Eigen::Map<const EigenMat> cmat(const Tensor<T>& t) {
        return Eigen::Map<const EigenMat>(t.data.data(), t.rows(), t.cols());
    }

    static void axpy(Tensor<T>& dst, const Tensor<T>& src, T a) {
        for (int64_t i = 0; i < dst.numel(); ++i) dst.data[i] += a * src.data[i];
    }

    static T gelu_fwd(T x) {
        const T c = T(0.7978845608028654);  // sqrt(2/pi)
        T u = c * (x + T(0.044715) * x * x * x);
        return T(0.5) * x * (T(1) + std::tanh(u));
    }
    static T gelu_bwd(T x) {
        const T c = T(0.7978845608028654);
        T u = c * (x + T(0.044715) * x * x * x);
        T th = std::tanh(u);
        T du = c * (T(1) + T(3) * T(0.044715) * x * x);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
    }
};

}  // namespace dac
