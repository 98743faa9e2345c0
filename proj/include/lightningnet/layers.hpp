#pragma once

#include <vector>

#include "lightningnet/rng.hpp"
#include "lightningnet/tensor.hpp"

namespace lnet {

inline Tensor2D concat_cols(const Tensor2D& a, const Tensor2D& b) {
    if (a.rows() != b.rows())
        throw validation_error("concat_cols: row mismatch");
    Tensor2D out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
        for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
    }
    return out;
}

inline Tensor2D slice_cols(const Tensor2D& a, std::size_t lo, std::size_t hi) {
    Tensor2D out(a.rows(), hi - lo);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = lo; j < hi; ++j) out(i, j - lo) = a(i, j);
    return out;
}

inline Tensor2D col_sum(const Tensor2D& a) {
    Tensor2D out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
    return out;
}

inline Tensor2D add_row_bias(const Tensor2D& a, const Tensor2D& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw validation_error("add_row_bias: bias shape mismatch");
    Tensor2D out = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += bias(0, j);
    return out;
}

// Glorot-uniform init in +-sqrt(6/(fan_in+fan_out)).
inline Tensor2D glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor2D t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = rng.uniform(-limit, limit);
    return t;
}

// ---------------------------------------------------------------------------
// GCN layer: out = relu(a_hat * h * w)
// ---------------------------------------------------------------------------

struct GcnCache {
    Tensor2D ah;  // a_hat * h (or the pre-aggregated input)
    Tensor2D out; // post-relu
};

inline Tensor2D gcn_forward(const Tensor2D& a_hat, const Tensor2D& h, const Tensor2D& w,
                            GcnCache* cache = nullptr) {
    Tensor2D ah = matmul(a_hat, h);
    Tensor2D out = activation(matmul(ah, w), Activation::relu);
    if (cache) {
        cache->ah = std::move(ah);
        cache->out = out;
    }
    return out;
}

// Same layer when the aggregation a_hat*h has been precomputed (the input
// is data, so this is shared across epochs).
inline Tensor2D gcn_forward_pre_aggregated(const Tensor2D& ah, const Tensor2D& w,
                                           GcnCache* cache = nullptr) {
    Tensor2D out = activation(matmul(ah, w), Activation::relu);
    if (cache) {
        cache->ah = ah;
        cache->out = out;
    }
    return out;
}

// Accumulates dW; optionally produces dH (needs symmetric a_hat).
inline void gcn_backward(const Tensor2D& a_hat, const Tensor2D& w, const GcnCache& cache,
                         const Tensor2D& d_out, Tensor2D& dw_accum,
                         Tensor2D* dh = nullptr) {
    Tensor2D dy = d_out;
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (cache.out.data()[i] <= 0.0) dy.data()[i] = 0.0;
    axpy(dw_accum, 1.0, matmul(transpose(cache.ah), dy));
    if (dh) *dh = matmul(a_hat, matmul(dy, transpose(w))); // a_hat symmetric
}

// ---------------------------------------------------------------------------
// GRU layer over a batch of rows
// ---------------------------------------------------------------------------

struct GruParams {
    std::size_t in_dim = 0, hidden = 0;
    Param wz, wr, wh; // (in+hidden) x hidden, acting on [x, h]
    Param bz, br, bh; // 1 x hidden

    GruParams() = default;
    GruParams(std::size_t in, std::size_t hid, Rng& rng)
        : in_dim(in), hidden(hid),
          wz(glorot_init(in + hid, hid, rng)),
          wr(glorot_init(in + hid, hid, rng)),
          wh(glorot_init(in + hid, hid, rng)),
          bz(Tensor2D(1, hid)), br(Tensor2D(1, hid)), bh(Tensor2D(1, hid)) {}

    std::vector<Param*> params() { return {&wz, &wr, &wh, &bz, &br, &bh}; }
};

struct GruStepCache {
    Tensor2D concat;  // [x, h_prev]
    Tensor2D concat2; // [x, r .* h_prev]
    Tensor2D z, r, hcand, h_prev;
};

struct GruSeqCache {
    std::vector<GruStepCache> steps;
    std::vector<Tensor2D> h_out; // hidden state after each step
};

inline Tensor2D gru_step(const GruParams& p, const Tensor2D& x, const Tensor2D& h_prev,
                         GruStepCache* cache = nullptr) {
    Tensor2D concat = concat_cols(x, h_prev);
    Tensor2D z = activation(add_row_bias(matmul(concat, p.wz.value), p.bz.value),
                            Activation::sigmoid);
    Tensor2D r = activation(add_row_bias(matmul(concat, p.wr.value), p.br.value),
                            Activation::sigmoid);
    Tensor2D concat2 = concat_cols(x, hadamard(r, h_prev));
    Tensor2D hcand = activation(add_row_bias(matmul(concat2, p.wh.value), p.bh.value),
                                Activation::tanh);
    Tensor2D h(h_prev.rows(), h_prev.cols());
    for (std::size_t i = 0; i < h.size(); ++i)
        h.data()[i] = (1.0 - z.data()[i]) * h_prev.data()[i] +
                      z.data()[i] * hcand.data()[i];
    if (cache) {
        cache->concat = std::move(concat);
        cache->concat2 = std::move(concat2);
        cache->z = std::move(z);
        cache->r = std::move(r);
        cache->hcand = std::move(hcand);
        cache->h_prev = h_prev;
    }
    return h;
}

// Runs the recurrence over xs; h0 defaults to zeros.
inline Tensor2D gru_forward(const GruParams& p, const std::vector<Tensor2D>& xs,
                            GruSeqCache* cache = nullptr,
                            const Tensor2D* h0 = nullptr) {
    if (xs.empty()) throw validation_error("gru_forward: empty sequence");
    Tensor2D h = h0 ? *h0 : Tensor2D(xs[0].rows(), p.hidden);
    if (cache) {
        cache->steps.resize(xs.size());
        cache->h_out.resize(xs.size());
    }
    for (std::size_t t = 0; t < xs.size(); ++t) {
        h = gru_step(p, xs[t], h, cache ? &cache->steps[t] : nullptr);
        if (cache) cache->h_out[t] = h;
    }
    return h;
}

// BPTT. d_h_steps[t] is the external gradient on h_t (usually zero except
// the final step). Accumulates parameter grads and returns per-step dx.
inline std::vector<Tensor2D> gru_backward(GruParams& p, const GruSeqCache& cache,
                                          const std::vector<Tensor2D>& d_h_steps,
                                          Tensor2D* dh0 = nullptr) {
    const std::size_t steps = cache.steps.size();
    if (d_h_steps.size() != steps)
        throw validation_error("gru_backward: gradient count mismatch");
    const std::size_t in = p.in_dim;
    std::vector<Tensor2D> dxs(steps);
    Tensor2D dh; // gradient flowing into h_t from t+1
    for (std::size_t ti = steps; ti-- > 0;) {
        const GruStepCache& c = cache.steps[ti];
        Tensor2D dht = d_h_steps[ti];
        if (dh.size() > 0) axpy(dht, 1.0, dh);

        const Tensor2D& z = c.z;
        const Tensor2D& r = c.r;
        const Tensor2D& hcand = c.hcand;
        const Tensor2D& h_prev = c.h_prev;

        Tensor2D dz(z.rows(), z.cols()), dhcand(z.rows(), z.cols()),
            dh_prev(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.size(); ++i) {
            dz.data()[i] = dht.data()[i] * (hcand.data()[i] - h_prev.data()[i]);
            dhcand.data()[i] = dht.data()[i] * z.data()[i];
            dh_prev.data()[i] = dht.data()[i] * (1.0 - z.data()[i]);
        }
        // candidate gate
        Tensor2D da_h = dhcand;
        for (std::size_t i = 0; i < da_h.size(); ++i)
            da_h.data()[i] *= 1.0 - hcand.data()[i] * hcand.data()[i];
        axpy(p.wh.grad, 1.0, matmul(transpose(c.concat2), da_h));
        axpy(p.bh.grad, 1.0, col_sum(da_h));
        Tensor2D dconcat2 = matmul(da_h, transpose(p.wh.value));
        Tensor2D dx = slice_cols(dconcat2, 0, in);
        Tensor2D drh = slice_cols(dconcat2, in, dconcat2.cols());
        Tensor2D dr(r.rows(), r.cols());
        for (std::size_t i = 0; i < r.size(); ++i) {
            dr.data()[i] = drh.data()[i] * h_prev.data()[i];
            dh_prev.data()[i] += drh.data()[i] * r.data()[i];
        }
        // update gate
        Tensor2D da_z = dz;
        for (std::size_t i = 0; i < da_z.size(); ++i)
            da_z.data()[i] *= z.data()[i] * (1.0 - z.data()[i]);
        axpy(p.wz.grad, 1.0, matmul(transpose(c.concat), da_z));
        axpy(p.bz.grad, 1.0, col_sum(da_z));
        Tensor2D dcz = matmul(da_z, transpose(p.wz.value));
        axpy(dx, 1.0, slice_cols(dcz, 0, in));
        axpy(dh_prev, 1.0, slice_cols(dcz, in, dcz.cols()));
        // reset gate
        Tensor2D da_r = dr;
        for (std::size_t i = 0; i < da_r.size(); ++i)
            da_r.data()[i] *= r.data()[i] * (1.0 - r.data()[i]);
        axpy(p.wr.grad, 1.0, matmul(transpose(c.concat), da_r));
        axpy(p.br.grad, 1.0, col_sum(da_r));
        Tensor2D dcr = matmul(da_r, transpose(p.wr.value));
        axpy(dx, 1.0, slice_cols(dcr, 0, in));
        axpy(dh_prev, 1.0, slice_cols(dcr, in, dcr.cols()));

        dxs[ti] = std::move(dx);
        dh = std::move(dh_prev);
    }
    if (dh0) *dh0 = dh;
    return dxs;
}

// ---------------------------------------------------------------------------
// LSTM layer (input/forget/output gates + cell state)
// ---------------------------------------------------------------------------

struct LstmParams {
    std::size_t in_dim = 0, hidden = 0;
    Param wi, wf, wo, wg; // (in+hidden) x hidden
    Param bi, bf, bo, bg; // 1 x hidden

    LstmParams() = default;
    LstmParams(std::size_t in, std::size_t hid, Rng& rng)
        : in_dim(in), hidden(hid),
          wi(glorot_init(in + hid, hid, rng)), wf(glorot_init(in + hid, hid, rng)),
          wo(glorot_init(in + hid, hid, rng)), wg(glorot_init(in + hid, hid, rng)),
          bi(Tensor2D(1, hid)), bf(Tensor2D(1, hid)), bo(Tensor2D(1, hid)),
          bg(Tensor2D(1, hid)) {}

    std::vector<Param*> params() {
        return {&wi, &wf, &wo, &wg, &bi, &bf, &bo, &bg};
    }
};

struct LstmStepCache {
    Tensor2D concat;
    Tensor2D i, f, o, g, c, c_prev, tanh_c;
};

struct LstmSeqCache {
    std::vector<LstmStepCache> steps;
};

inline Tensor2D lstm_forward(const LstmParams& p, const std::vector<Tensor2D>& xs,
                             LstmSeqCache* cache = nullptr) {
    if (xs.empty()) throw validation_error("lstm_forward: empty sequence");
    const std::size_t b = xs[0].rows();
    Tensor2D h(b, p.hidden), c(b, p.hidden);
    if (cache) cache->steps.resize(xs.size());
    for (std::size_t t = 0; t < xs.size(); ++t) {
        Tensor2D concat = concat_cols(xs[t], h);
        auto gate = [&](const Param& w, const Param& bias, Activation act) {
            return activation(add_row_bias(matmul(concat, w.value), bias.value), act);
        };
        Tensor2D ig = gate(p.wi, p.bi, Activation::sigmoid);
        Tensor2D fg = gate(p.wf, p.bf, Activation::sigmoid);
        Tensor2D og = gate(p.wo, p.bo, Activation::sigmoid);
        Tensor2D gg = gate(p.wg, p.bg, Activation::tanh);
        Tensor2D c_new(b, p.hidden);
        for (std::size_t i = 0; i < c_new.size(); ++i)
            c_new.data()[i] = fg.data()[i] * c.data()[i] + ig.data()[i] * gg.data()[i];
        Tensor2D tc = activation(c_new, Activation::tanh);
        Tensor2D h_new(b, p.hidden);
        for (std::size_t i = 0; i < h_new.size(); ++i)
            h_new.data()[i] = og.data()[i] * tc.data()[i];
        if (cache) {
            LstmStepCache& sc = cache->steps[t];
            sc.concat = std::move(concat);
            sc.i = std::move(ig);
            sc.f = std::move(fg);
            sc.o = std::move(og);
            sc.g = std::move(gg);
            sc.c_prev = c;
            sc.c = c_new;
            sc.tanh_c = tc;
        }
        c = std::move(c_new);
        h = std::move(h_new);
    }
    return h;
}

inline std::vector<Tensor2D> lstm_backward(LstmParams& p, const LstmSeqCache& cache,
                                           const Tensor2D& d_h_final) {
    const std::size_t steps = cache.steps.size();
    const std::size_t in = p.in_dim;
    std::vector<Tensor2D> dxs(steps);
    Tensor2D dh = d_h_final;
    Tensor2D dc(d_h_final.rows(), d_h_final.cols());
    for (std::size_t ti = steps; ti-- > 0;) {
        const LstmStepCache& c = cache.steps[ti];
        Tensor2D d_o(dh.rows(), dh.cols()), d_c = dc;
        for (std::size_t i = 0; i < dh.size(); ++i) {
            d_o.data()[i] = dh.data()[i] * c.tanh_c.data()[i];
            d_c.data()[i] += dh.data()[i] * c.o.data()[i] *
                             (1.0 - c.tanh_c.data()[i] * c.tanh_c.data()[i]);
        }
        Tensor2D d_i(dh.rows(), dh.cols()), d_f(dh.rows(), dh.cols()),
            d_g(dh.rows(), dh.cols()), dc_prev(dh.rows(), dh.cols());
        for (std::size_t i = 0; i < dh.size(); ++i) {
            d_i.data()[i] = d_c.data()[i] * c.g.data()[i];
            d_f.data()[i] = d_c.data()[i] * c.c_prev.data()[i];
            d_g.data()[i] = d_c.data()[i] * c.i.data()[i];
            dc_prev.data()[i] = d_c.data()[i] * c.f.data()[i];
        }
        auto through_gate = [&](Tensor2D& d_gate, const Tensor2D& act, bool is_tanh) {
            for (std::size_t i = 0; i < d_gate.size(); ++i) {
                const double a = act.data()[i];
                d_gate.data()[i] *= is_tanh ? (1.0 - a * a) : a * (1.0 - a);
            }
        };
        through_gate(d_i, c.i, false);
        through_gate(d_f, c.f, false);
        through_gate(d_o, c.o, false);
        through_gate(d_g, c.g, true);
        Tensor2D dconcat(c.concat.rows(), c.concat.cols());
        auto accumulate = [&](Param& w, Param& bias, const Tensor2D& da) {
            axpy(w.grad, 1.0, matmul(transpose(c.concat), da));
            axpy(bias.grad, 1.0, col_sum(da));
            axpy(dconcat, 1.0, matmul(da, transpose(w.value)));
        };
        accumulate(p.wi, p.bi, d_i);
        accumulate(p.wf, p.bf, d_f);
        accumulate(p.wo, p.bo, d_o);
        accumulate(p.wg, p.bg, d_g);
        dxs[ti] = slice_cols(dconcat, 0, in);
        dh = slice_cols(dconcat, in, dconcat.cols());
        dc = std::move(dc_prev);
    }
    return dxs;
}

// ---------------------------------------------------------------------------
// Fully connected layer
// ---------------------------------------------------------------------------

struct FcCache {
    Tensor2D input;
};

inline Tensor2D fc_forward(const Param& w, const Param& b, const Tensor2D& x,
                           FcCache* cache = nullptr) {
    Tensor2D out = add_row_bias(matmul(x, w.value), b.value);
    if (cache) cache->input = x;
    return out;
}

inline Tensor2D fc_backward(Param& w, Param& b, const FcCache& cache,
                            const Tensor2D& d_out) {
    axpy(w.grad, 1.0, matmul(transpose(cache.input), d_out));
    axpy(b.grad, 1.0, col_sum(d_out));
    return matmul(d_out, transpose(w.value));
}

} // namespace lnet
