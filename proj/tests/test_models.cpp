#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "lightningnet/layers.hpp"
#include "lightningnet/models.hpp"

using namespace lnet;

namespace {

Tensor2D random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                       double hi = 1.0) {
    Tensor2D t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Finite-difference check for one parameter of a model: loss_fn recomputes the
// forward loss from scratch; analytic is the accumulated p.grad.
template <class F>
double check_param(Param& p, F&& loss_fn) {
    return finite_diff_gradcheck(
        [&](const Tensor2D& v) {
            const Tensor2D saved = p.value;
            p.value = v;
            const double l = loss_fn();
            p.value = saved;
            return l;
        },
        p.value, p.grad);
}

// Two-cell symmetric renormalized adjacency for single-edge graphs.
Tensor2D two_cell_a_hat() {
    Tensor2D a(2, 2);
    a(0, 0) = a(1, 1) = a(0, 1) = a(1, 0) = 0.5;
    return a;
}

} // namespace

TEST_CASE("column helpers: concat, slice, col_sum, bias") {
    Tensor2D a(2, 2, {1, 2, 3, 4}), b(2, 1, {5, 6});
    Tensor2D cc = concat_cols(a, b);
    REQUIRE(cc == Tensor2D(2, 3, {1, 2, 5, 3, 4, 6}));
    REQUIRE(slice_cols(cc, 0, 2) == a);
    REQUIRE(slice_cols(cc, 2, 3) == b);
    REQUIRE(col_sum(a) == Tensor2D(1, 2, {4, 6}));
    Tensor2D bias(1, 2, {10, 20});
    REQUIRE(add_row_bias(a, bias) == Tensor2D(2, 2, {11, 22, 13, 24}));
    REQUIRE_THROWS_AS(concat_cols(a, Tensor2D(3, 1)), validation_error);
    REQUIRE_THROWS_AS(add_row_bias(a, Tensor2D(1, 3)), validation_error);
}

TEST_CASE("glorot init stays inside its bound and is seed-deterministic") {
    Rng r1(5), r2(5);
    Tensor2D w1 = glorot_init(10, 6, r1);
    Tensor2D w2 = glorot_init(10, 6, r2);
    REQUIRE(w1 == w2);
    const double limit = std::sqrt(6.0 / 16.0);
    for (std::size_t i = 0; i < w1.size(); ++i) {
        REQUIRE(w1.data()[i] >= -limit);
        REQUIRE(w1.data()[i] <= limit);
    }
}

TEST_CASE("gcn forward matches a by-hand relu(A H W)") {
    Tensor2D a_hat = two_cell_a_hat();
    Tensor2D h(2, 2, {1, -1, 3, 2});
    Tensor2D w(2, 1, {2, -1});
    // A*H = [[2,0.5],[2,0.5]]; (A H) W = [[3.5],[3.5]] -> relu unchanged
    GcnCache cache;
    Tensor2D out = gcn_forward(a_hat, h, w, &cache);
    REQUIRE(out(0, 0) == Catch::Approx(3.5));
    REQUIRE(out(1, 0) == Catch::Approx(3.5));
    // negative pre-activation clips to zero
    Tensor2D wneg(2, 1, {-2, 1});
    REQUIRE(gcn_forward(a_hat, h, wneg)(0, 0) == 0.0);
    // pre-aggregated path agrees
    Tensor2D ah = matmul(a_hat, h);
    REQUIRE(gcn_forward_pre_aggregated(ah, w) == out);
}

TEST_CASE("gcn backward gradients pass finite differences") {
    Rng rng(31);
    Tensor2D a_hat(3, 3);
    // random symmetric aggregation with self loops
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i; j < 3; ++j) a_hat(i, j) = a_hat(j, i) = rng.uniform(0, 1);
    Tensor2D h = random_tensor(3, 4, rng);
    Param w(random_tensor(4, 2, rng));
    Tensor2D mixer = random_tensor(3, 2, rng); // fixed projection to scalar loss

    auto loss = [&]() {
        Tensor2D out = gcn_forward(a_hat, h, w.value);
        double l = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
            l += out.data()[i] * mixer.data()[i];
        return l;
    };
    GcnCache cache;
    gcn_forward(a_hat, h, w.value, &cache);
    w.zero_grad();
    Tensor2D dh;
    gcn_backward(a_hat, w.value, cache, mixer, w.grad, &dh);
    REQUIRE(check_param(w, loss) < 1e-6);
    // input gradient
    double err_h = finite_diff_gradcheck(
        [&](const Tensor2D& hv) {
            Tensor2D out = gcn_forward(a_hat, hv, w.value);
            double l = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i)
                l += out.data()[i] * mixer.data()[i];
            return l;
        },
        h, dh);
    REQUIRE(err_h < 1e-6);
}

TEST_CASE("gru step matches hand-evaluated scalar gate equations") {
    Rng rng(1);
    GruParams p(1, 1, rng);
    p.wz.value = Tensor2D(2, 1, {0.4, -0.3});
    p.wr.value = Tensor2D(2, 1, {-0.2, 0.5});
    p.wh.value = Tensor2D(2, 1, {0.7, 0.1});
    p.bz.value(0, 0) = 0.05;
    p.br.value(0, 0) = -0.1;
    p.bh.value(0, 0) = 0.2;
    const double x = 0.8, h0 = -0.4;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double z = sig(0.4 * x - 0.3 * h0 + 0.05);
    const double r = sig(-0.2 * x + 0.5 * h0 - 0.1);
    const double hc = std::tanh(0.7 * x + 0.1 * (r * h0) + 0.2);
    const double expect = (1.0 - z) * h0 + z * hc;
    Tensor2D xt(1, 1, {x}), h0t(1, 1, {h0});
    Tensor2D h1 = gru_step(p, xt, h0t);
    REQUIRE(h1(0, 0) == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("gru BPTT gradients pass finite differences") {
    Rng rng(13);
    const std::size_t in = 3, hid = 2, batch = 2, steps = 4;
    GruParams p(in, hid, rng);
    std::vector<Tensor2D> xs;
    for (std::size_t t = 0; t < steps; ++t) xs.push_back(random_tensor(batch, in, rng));
    Tensor2D mixer = random_tensor(batch, hid, rng);

    auto loss = [&]() {
        Tensor2D h = gru_forward(p, xs);
        double l = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) l += h.data()[i] * mixer.data()[i];
        return l;
    };
    GruSeqCache cache;
    gru_forward(p, xs, &cache);
    for (Param* pp : p.params()) pp->zero_grad();
    std::vector<Tensor2D> d_steps(steps);
    for (std::size_t t = 0; t + 1 < steps; ++t) d_steps[t] = Tensor2D(batch, hid);
    d_steps[steps - 1] = mixer;
    std::vector<Tensor2D> dxs = gru_backward(p, cache, d_steps);

    for (Param* pp : p.params()) REQUIRE(check_param(*pp, loss) < 1e-5);
    // input gradient at an interior step
    double err_x = finite_diff_gradcheck(
        [&](const Tensor2D& xv) {
            auto xs2 = xs;
            xs2[1] = xv;
            Tensor2D h = gru_forward(p, xs2);
            double l = 0.0;
            for (std::size_t i = 0; i < h.size(); ++i) l += h.data()[i] * mixer.data()[i];
            return l;
        },
        xs[1], dxs[1]);
    REQUIRE(err_x < 1e-5);
    REQUIRE_THROWS_AS(gru_forward(p, {}), validation_error);
}

TEST_CASE("gru backward accepts mid-sequence external gradients") {
    // supervise every step's hidden state, not just the last
    Rng rng(29);
    const std::size_t in = 2, hid = 2, batch = 1, steps = 3;
    GruParams p(in, hid, rng);
    std::vector<Tensor2D> xs;
    for (std::size_t t = 0; t < steps; ++t) xs.push_back(random_tensor(batch, in, rng));
    std::vector<Tensor2D> mixers;
    for (std::size_t t = 0; t < steps; ++t) mixers.push_back(random_tensor(batch, hid, rng));
    auto loss = [&]() {
        GruSeqCache c;
        gru_forward(p, xs, &c);
        double l = 0.0;
        for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t i = 0; i < c.h_out[t].size(); ++i)
                l += c.h_out[t].data()[i] * mixers[t].data()[i];
        return l;
    };
    GruSeqCache cache;
    gru_forward(p, xs, &cache);
    for (Param* pp : p.params()) pp->zero_grad();
    gru_backward(p, cache, mixers);
    for (Param* pp : p.params()) REQUIRE(check_param(*pp, loss) < 1e-5);
}

TEST_CASE("lstm forward matches hand-evaluated scalar gate equations") {
    Rng rng(2);
    LstmParams p(1, 1, rng);
    p.wi.value = Tensor2D(2, 1, {0.3, 0.1});
    p.wf.value = Tensor2D(2, 1, {-0.2, 0.4});
    p.wo.value = Tensor2D(2, 1, {0.5, -0.1});
    p.wg.value = Tensor2D(2, 1, {0.6, 0.2});
    p.bi.value(0, 0) = 0.0;
    p.bf.value(0, 0) = 0.1;
    p.bo.value(0, 0) = -0.05;
    p.bg.value(0, 0) = 0.0;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double x1 = 0.7, x2 = -0.3;
    double h = 0.0, c = 0.0;
    for (double x : {x1, x2}) {
        const double ig = sig(0.3 * x + 0.1 * h + 0.0);
        const double fg = sig(-0.2 * x + 0.4 * h + 0.1);
        const double og = sig(0.5 * x - 0.1 * h - 0.05);
        const double gg = std::tanh(0.6 * x + 0.2 * h + 0.0);
        c = fg * c + ig * gg;
        h = og * std::tanh(c);
    }
    std::vector<Tensor2D> xs = {Tensor2D(1, 1, {x1}), Tensor2D(1, 1, {x2})};
    Tensor2D got = lstm_forward(p, xs);
    REQUIRE(got(0, 0) == Catch::Approx(h).margin(1e-12));
}

TEST_CASE("lstm gradients pass finite differences") {
    Rng rng(37);
    const std::size_t in = 2, hid = 3, batch = 2, steps = 3;
    LstmParams p(in, hid, rng);
    std::vector<Tensor2D> xs;
    for (std::size_t t = 0; t < steps; ++t) xs.push_back(random_tensor(batch, in, rng));
    Tensor2D mixer = random_tensor(batch, hid, rng);
    auto loss = [&]() {
        Tensor2D h = lstm_forward(p, xs);
        double l = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) l += h.data()[i] * mixer.data()[i];
        return l;
    };
    LstmSeqCache cache;
    lstm_forward(p, xs, &cache);
    for (Param* pp : p.params()) pp->zero_grad();
    std::vector<Tensor2D> dxs = lstm_backward(p, cache, mixer);
    for (Param* pp : p.params()) REQUIRE(check_param(*pp, loss) < 1e-5);
    double err_x = finite_diff_gradcheck(
        [&](const Tensor2D& xv) {
            auto xs2 = xs;
            xs2[0] = xv;
            Tensor2D h = lstm_forward(p, xs2);
            double l = 0.0;
            for (std::size_t i = 0; i < h.size(); ++i) l += h.data()[i] * mixer.data()[i];
            return l;
        },
        xs[0], dxs[0]);
    REQUIRE(err_x < 1e-5);
}

TEST_CASE("fc layer forward and gradients") {
    Rng rng(41);
    Param w(random_tensor(3, 2, rng)), b(random_tensor(1, 2, rng));
    Tensor2D x = random_tensor(4, 3, rng);
    Tensor2D mixer = random_tensor(4, 2, rng);
    FcCache cache;
    Tensor2D out = fc_forward(w, b, x, &cache);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = b.value(0, j);
            for (std::size_t k = 0; k < 3; ++k) s += x(i, k) * w.value(k, j);
            REQUIRE(out(i, j) == Catch::Approx(s).margin(1e-12));
        }
    w.zero_grad();
    b.zero_grad();
    Tensor2D dx = fc_backward(w, b, cache, mixer);
    auto loss = [&]() {
        Tensor2D o = fc_forward(w, b, x);
        double l = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) l += o.data()[i] * mixer.data()[i];
        return l;
    };
    REQUIRE(check_param(w, loss) < 1e-7);
    REQUIRE(check_param(b, loss) < 1e-7);
    double err_x = finite_diff_gradcheck(
        [&](const Tensor2D& xv) {
            Tensor2D o = fc_forward(w, b, xv);
            double l = 0.0;
            for (std::size_t i = 0; i < o.size(); ++i) l += o.data()[i] * mixer.data()[i];
            return l;
        },
        x, dx);
    REQUIRE(err_x < 1e-7);
}

TEST_CASE("subclassifier end-to-end gradients through BCE pass finite differences") {
    Rng rng(53);
    ModelConfig cfg;
    cfg.mb = 3;
    cfg.hz = 2;
    cfg.n_gcn = 3;
    cfg.n_hidden = 4;
    cfg.seed = 9;
    const std::size_t cells = 3, f_in = 2;
    Tensor2D a_hat(cells, cells);
    for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t j = i; j < cells; ++j)
            a_hat(i, j) = a_hat(j, i) = rng.uniform(0.0, 0.6);
    SubClassifier m(f_in, a_hat, cfg);

    std::vector<Tensor2D> xs;
    for (std::size_t t = 0; t < cfg.mb; ++t) xs.push_back(random_tensor(cells, f_in, rng));
    Tensor2D target(cells, 1);
    target(0, 0) = 1;
    const double pw = 2.5;

    auto loss = [&]() {
        SubClassifierCache c;
        return bce_loss(m.forward(xs, false, c), target, pw).loss;
    };
    SubClassifierCache cache;
    Tensor2D probs = m.forward(xs, false, cache);
    for (Param* pp : m.params()) pp->zero_grad();
    BceResult bce = bce_loss(probs, target, pw);
    Tensor2D d_logits = bce.grad;
    for (std::size_t i = 0; i < d_logits.size(); ++i) {
        const double p = probs.data()[i];
        d_logits.data()[i] *= p * (1.0 - p);
    }
    m.backward(cache, d_logits);
    for (Param* pp : m.params()) REQUIRE(check_param(*pp, loss) < 1e-4);
}

TEST_CASE("subclassifier pre-aggregated inputs reproduce the direct forward") {
    Rng rng(59);
    ModelConfig cfg;
    cfg.mb = 2;
    cfg.n_gcn = 3;
    cfg.n_hidden = 3;
    Tensor2D a_hat = two_cell_a_hat();
    SubClassifier m(3, a_hat, cfg);
    std::vector<Tensor2D> xs, axs;
    for (std::size_t t = 0; t < cfg.mb; ++t) {
        xs.push_back(random_tensor(2, 3, rng));
        axs.push_back(matmul(a_hat, xs.back()));
    }
    SubClassifierCache c1, c2;
    Tensor2D p1 = m.forward(xs, false, c1);
    Tensor2D p2 = m.forward(axs, true, c2);
    for (std::size_t i = 0; i < p1.size(); ++i)
        REQUIRE(p1.data()[i] == Catch::Approx(p2.data()[i]).margin(1e-14));
    // wrong step count rejected
    xs.pop_back();
    SubClassifierCache c3;
    REQUIRE_THROWS_AS(m.forward(xs, false, c3), validation_error);
}

TEST_CASE("subclassifier rejects an asymmetric adjacency") {
    Tensor2D bad(2, 2);
    bad(0, 1) = 0.7;
    ModelConfig cfg;
    REQUIRE_THROWS_AS(SubClassifier(2, bad, cfg), validation_error);
    REQUIRE_THROWS_AS(SubClassifier(2, Tensor2D(2, 3), cfg), validation_error);
}

TEST_CASE("two-layer GRU stack gradients pass finite differences") {
    Rng rng(61);
    ModelConfig cfg;
    cfg.mb = 3;
    cfg.n_gcn = 2;
    cfg.n_hidden = 3;
    cfg.n_gru_layers = 2;
    Tensor2D a_hat = two_cell_a_hat();
    SubClassifier m(2, a_hat, cfg);
    REQUIRE(m.gru.size() == 2);
    std::vector<Tensor2D> xs;
    for (std::size_t t = 0; t < cfg.mb; ++t) xs.push_back(random_tensor(2, 2, rng));
    Tensor2D target(2, 1);
    target(1, 0) = 1;
    auto loss = [&]() {
        SubClassifierCache c;
        return bce_loss(m.forward(xs, false, c), target).loss;
    };
    SubClassifierCache cache;
    Tensor2D probs = m.forward(xs, false, cache);
    for (Param* pp : m.params()) pp->zero_grad();
    BceResult bce = bce_loss(probs, target);
    Tensor2D d_logits = bce.grad;
    for (std::size_t i = 0; i < d_logits.size(); ++i) {
        const double p = probs.data()[i];
        d_logits.data()[i] *= p * (1.0 - p);
    }
    m.backward(cache, d_logits);
    for (Param* pp : m.params()) REQUIRE(check_param(*pp, loss) < 1e-4);
}

TEST_CASE("lstm baseline gradients pass finite differences") {
    Rng rng(67);
    ModelConfig cfg;
    cfg.mb = 3;
    cfg.n_hidden = 3;
    LstmBaseline m(2, cfg);
    std::vector<Tensor2D> xs;
    for (std::size_t t = 0; t < cfg.mb; ++t) xs.push_back(random_tensor(4, 2, rng));
    Tensor2D target(4, 1);
    target(2, 0) = 1;
    auto loss = [&]() {
        LstmBaselineCache c;
        return bce_loss(m.forward(xs, false, c), target).loss;
    };
    LstmBaselineCache cache;
    Tensor2D probs = m.forward(xs, false, cache);
    for (Param* pp : m.params()) pp->zero_grad();
    BceResult bce = bce_loss(probs, target);
    Tensor2D d_logits = bce.grad;
    for (std::size_t i = 0; i < d_logits.size(); ++i) {
        const double p = probs.data()[i];
        d_logits.data()[i] *= p * (1.0 - p);
    }
    m.backward(cache, d_logits);
    for (Param* pp : m.params()) REQUIRE(check_param(*pp, loss) < 1e-4);
}

TEST_CASE("gcn baseline uses only the latest hour and its gradients check out") {
    Rng rng(71);
    ModelConfig cfg;
    cfg.mb = 3;
    cfg.n_gcn = 3;
    Tensor2D a_hat = two_cell_a_hat();
    GcnBaseline m(2, a_hat, cfg);
    REQUIRE(m.hours_needed() == 1);
    std::vector<Tensor2D> xs = {random_tensor(2, 2, rng)};
    Tensor2D target(2, 1);
    target(0, 0) = 1;
    auto loss = [&]() {
        GcnBaselineCache c;
        return bce_loss(m.forward(xs, false, c), target).loss;
    };
    GcnBaselineCache cache;
    Tensor2D probs = m.forward(xs, false, cache);
    for (Param* pp : m.params()) pp->zero_grad();
    BceResult bce = bce_loss(probs, target);
    Tensor2D d_logits = bce.grad;
    for (std::size_t i = 0; i < d_logits.size(); ++i) {
        const double p = probs.data()[i];
        d_logits.data()[i] *= p * (1.0 - p);
    }
    m.backward(cache, d_logits);
    for (Param* pp : m.params()) REQUIRE(check_param(*pp, loss) < 1e-4);
    // earlier hours must not influence the output
    std::vector<Tensor2D> xs3 = {random_tensor(2, 2, rng), random_tensor(2, 2, rng),
                                 xs[0]};
    GcnBaselineCache c2;
    Tensor2D probs3 = m.forward(xs3, false, c2);
    REQUIRE(probs == probs3);
}

namespace {

// Panel whose feature 0 is a perfect one-step-early predictor of hotness
// within the next hz hours.
KpiPanel early_warning_panel(std::size_t T, std::size_t M, std::size_t hz,
                             std::uint64_t seed) {
    KpiPanel p;
    p.hours = T;
    p.n_features = 1;
    for (std::size_t m = 0; m < M; ++m) p.cell_ids.push_back("c" + std::to_string(m));
    p.kpis.assign(T * M, 0.0);
    p.mask.assign(T * M, 1);
    p.hot.assign(T, std::vector<std::uint8_t>(M, 0));
    Rng rng(seed);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t t = 0; t < T; ++t)
            if (rng.bernoulli(0.04)) {
                for (std::size_t u = t; u < std::min(T, t + 3); ++u) p.hot[u][m] = 1;
            }
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t t = 0; t < T; ++t) {
            bool soon = false;
            for (std::size_t u = t + 1; u <= t + hz && u < T; ++u)
                soon |= (p.hot[u][m] != 0);
            p.at(t, m, 0) = soon ? 1.0 : -1.0;
        }
    return p;
}

} // namespace

TEST_CASE("training learns a separable early-warning task") {
    const std::size_t T = 240, M = 2, mb = 3, hz = 2;
    KpiPanel p = early_warning_panel(T, M, hz, 4242);
    auto ds = make_windows(p, {0, 1}, {0}, mb, hz);
    auto split = chronological_split(ds, SplitSpec{});
    // edgeless two-cell graph: the renormalized operator is the identity, so
    // per-cell targets stay separable
    Tensor2D a_hat(2, 2);
    a_hat(0, 0) = a_hat(1, 1) = 1.0;
    ModelConfig cfg;
    cfg.mb = mb;
    cfg.hz = hz;
    cfg.n_gcn = 4;
    cfg.n_hidden = 4;
    cfg.lr = 0.05;
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.patience = 40;
    cfg.seed = 3;
    SubClassifier m(1, a_hat, cfg);
    auto hours = materialize_hours(ds, &a_hat);
    TrainLog log = train_model(m, split.train, split.val, hours);
    REQUIRE_FALSE(log.no_positives_warning);
    REQUIRE(log.epochs.size() >= 2);
    // loss decreased over training
    REQUIRE(log.epochs.back().train_loss < log.epochs.front().train_loss);
    ConfusionMatrix cm = evaluate_model(m, split.test, hours, cfg.decision_threshold);
    PrecisionRecall pr = precision_recall(cm);
    REQUIRE(pr.recall >= 0.9);
    REQUIRE(pr.precision >= 0.9);
}

TEST_CASE("train_model warns when the train split has no positives") {
    KpiPanel p = early_warning_panel(120, 1, 2, 7);
    for (auto& row : p.hot) row.assign(1, 0);
    for (std::size_t t = 0; t < p.hours; ++t) p.at(t, 0, 0) = -1.0;
    // put one positive far in the test region so windows still have both labels absent in train
    auto ds = make_windows(p, {0}, {0}, 3, 2);
    auto split = chronological_split(ds, SplitSpec{});
    ModelConfig cfg;
    cfg.mb = 3;
    cfg.hz = 2;
    cfg.n_gcn = 2;
    cfg.n_hidden = 2;
    cfg.epochs = 2;
    Tensor2D a_hat(1, 1);
    a_hat(0, 0) = 1.0;
    SubClassifier m(1, a_hat, cfg);
    auto hours = materialize_hours(ds, &a_hat);
    TrainLog log = train_model(m, split.train, split.val, hours);
    REQUIRE(log.no_positives_warning);
}

TEST_CASE("predict_labels thresholds behave at the extremes") {
    KpiPanel p = early_warning_panel(60, 2, 2, 99);
    auto ds = make_windows(p, {0, 1}, {0}, 3, 2);
    Tensor2D a_hat = two_cell_a_hat();
    ModelConfig cfg;
    cfg.mb = 3;
    cfg.hz = 2;
    cfg.n_gcn = 2;
    cfg.n_hidden = 2;
    SubClassifier m(1, a_hat, cfg);
    auto hours = materialize_hours(ds, &a_hat);
    auto all_pos = predict_labels(m, ds, hours, 0.0);
    auto all_neg = predict_labels(m, ds, hours, 1.0 + 1e-9);
    for (std::size_t w = 0; w < ds.n_windows(); ++w)
        for (std::size_t c = 0; c < 2; ++c) {
            REQUIRE(all_pos[w][c] == 1);
            REQUIRE(all_neg[w][c] == 0);
        }
    // evaluate_model at threshold 0: everything predicted positive
    ConfusionMatrix cm = evaluate_model(m, ds, hours, 0.0);
    REQUIRE(cm.fn == 0);
    REQUIRE(cm.tn == 0);
    REQUIRE(cm.tp + cm.fp == ds.n_windows() * 2);
}

TEST_CASE("subclassifier checkpoint round-trips within float32 precision") {
    Rng rng(83);
    ModelConfig cfg;
    cfg.mb = 3;
    cfg.hz = 2;
    cfg.n_gcn = 3;
    cfg.n_hidden = 4;
    cfg.n_gru_layers = 2;
    cfg.seed = 17;
    Tensor2D a_hat = two_cell_a_hat();
    SubClassifier m(3, a_hat, cfg);
    const auto path =
        (std::filesystem::temp_directory_path() / "lnet_test_sc.ckpt").string();
    save_subclassifier(path, m);
    SubClassifier loaded = load_subclassifier(path);
    REQUIRE(loaded.config.mb == cfg.mb);
    REQUIRE(loaded.config.n_gru_layers == 2);
    REQUIRE(loaded.f_in == 3);
    std::vector<Tensor2D> xs;
    for (std::size_t t = 0; t < cfg.mb; ++t) xs.push_back(random_tensor(2, 3, rng));
    SubClassifierCache c1, c2;
    Tensor2D p1 = m.forward(xs, false, c1);
    Tensor2D p2 = loaded.forward(xs, false, c2);
    for (std::size_t i = 0; i < p1.size(); ++i)
        REQUIRE(p1.data()[i] == Catch::Approx(p2.data()[i]).margin(1e-5));
    // a second save/load is exactly stable (float32 fixed point)
    save_subclassifier(path, loaded);
    SubClassifier again = load_subclassifier(path);
    SubClassifierCache c3;
    Tensor2D p3 = again.forward(xs, false, c3);
    REQUIRE(p2 == p3);
    std::filesystem::remove(path);
}

TEST_CASE("loading a non-subclassifier checkpoint fails cleanly") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto path = (dir / "lnet_test_bad.ckpt").string();
    std::vector<CheckpointEntry> entries = {{"x", Tensor2D(1, 1, {1.0})}};
    save_checkpoint_file(path, entries, R"({"model_type":"other"})");
    REQUIRE_THROWS_AS(load_subclassifier(path), data_error);
    std::filesystem::remove(path);
    REQUIRE_THROWS_AS(load_subclassifier((dir / "lnet_absent.ckpt").string()), io_error);
}

TEST_CASE("model config JSON round-trip") {
    ModelConfig c;
    c.mb = 7;
    c.hz = 5;
    c.n_gcn = 11;
    c.lr = 0.0125;
    c.pos_weight = 9.5;
    c.seed = 991;
    ModelConfig back = model_config_from_json(model_config_to_json(c));
    REQUIRE(back.mb == 7);
    REQUIRE(back.hz == 5);
    REQUIRE(back.n_gcn == 11);
    REQUIRE(back.lr == Catch::Approx(0.0125));
    REQUIRE(back.pos_weight == Catch::Approx(9.5));
    REQUIRE(back.seed == 991);
}

TEST_CASE("rebind swaps the graph operator") {
    ModelConfig cfg;
    cfg.mb = 2;
    cfg.n_gcn = 2;
    cfg.n_hidden = 2;
    SubClassifier m(1, two_cell_a_hat(), cfg);
    Tensor2D eye(2, 2);
    eye(0, 0) = eye(1, 1) = 1.0;
    Rng rng(3);
    std::vector<Tensor2D> xs = {random_tensor(2, 1, rng), random_tensor(2, 1, rng)};
    SubClassifierCache c1;
    Tensor2D before = m.forward(xs, false, c1);
    m.rebind(eye);
    SubClassifierCache c2;
    Tensor2D after = m.forward(xs, false, c2);
    REQUIRE(m.a_hat == eye);
    REQUIRE_FALSE(before == after);
    Tensor2D asym(2, 2);
    asym(0, 1) = 0.3;
    REQUIRE_THROWS_AS(m.rebind(asym), validation_error);
}
