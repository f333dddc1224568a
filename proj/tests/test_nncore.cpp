#include <doctest.h>

#include <cmath>
#include <numeric>

#include "rmdl/activation.hpp"
#include "rmdl/layers.hpp"
#include "rmdl/model.hpp"
#include "support.hpp"

using namespace rmdl;
using namespace rmdl::testing;
using doctest::Approx;

namespace {

Tensor<double> vec(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor<double>({n}, std::move(v));
}

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>({r, c}, std::move(v)); }

Tensor<double> zeros(Shape s) { return Tensor<double>(std::move(s)); }

double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain scalar LSTM and GRU used as oracles for the tensor implementations.
struct ScalarLSTM {
    std::size_t in, hid;
    std::vector<double> wi, wf, wo, wc, bi, bf, bo, bc; // rows of length in+hid

    std::pair<std::vector<double>, std::vector<double>> step(const std::vector<double>& x, const std::vector<double>& h,
                                                            const std::vector<double>& c) const {
        std::vector<double> xh(x);
        xh.insert(xh.end(), h.begin(), h.end());
        auto affine = [&](const std::vector<double>& w, const std::vector<double>& b, std::size_t r) {
            double s = b[r];
            for (std::size_t k = 0; k < in + hid; ++k) s += w[r * (in + hid) + k] * xh[k];
            return s;
        };
        std::vector<double> hn(hid), cn(hid);
        for (std::size_t r = 0; r < hid; ++r) {
            const double i = scalar_sigmoid(affine(wi, bi, r));
            const double cand = std::tanh(affine(wc, bc, r));
            const double f = scalar_sigmoid(affine(wf, bf, r));
            cn[r] = i * cand + f * c[r];
            const double o = scalar_sigmoid(affine(wo, bo, r));
            hn[r] = o * std::tanh(cn[r]);
        }
        return {hn, cn};
    }
};

struct ScalarGRU {
    std::size_t in, hid;
    std::vector<double> wz, uz, bz, wr, ur, br, wh, uh, bh;

    std::vector<double> step(const std::vector<double>& x, const std::vector<double>& h) const {
        auto mv = [](const std::vector<double>& m, const std::vector<double>& v, std::size_t r, std::size_t n) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += m[r * n + k] * v[k];
            return s;
        };
        std::vector<double> z(hid), rh(hid), out(hid);
        for (std::size_t r = 0; r < hid; ++r) {
            z[r] = scalar_sigmoid(mv(wz, x, r, in) + mv(uz, h, r, hid) + bz[r]);
            rh[r] = scalar_sigmoid(mv(wr, x, r, in) + mv(ur, h, r, hid) + br[r]) * h[r];
        }
        for (std::size_t r = 0; r < hid; ++r) {
            const double cand = std::tanh(mv(wh, x, r, in) + mv(uh, rh, r, hid) + bh[r]);
            out[r] = z[r] * h[r] + (1.0 - z[r]) * cand;
        }
        return out;
    }
};

std::vector<double> as_vector(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

} // namespace

TEST_SUITE("activations") {
    TEST_CASE("pointwise values") {
        CHECK(activation(Activation::Sigmoid, vec({0.0}))[0] == Approx(0.5));
        CHECK(activation(Activation::Sigmoid, vec({std::log(3.0)}))[0] == Approx(0.75).epsilon(1e-15));
        const auto r = activation(Activation::Relu, vec({-2.0, 3.0}));
        CHECK(r[0] == 0.0);
        CHECK(r[1] == 3.0);
        const auto t = activation(Activation::Tanh, vec({-30.0, 0.3, 30.0}));
        CHECK(t[0] >= -1.0);
        CHECK(t[1] == Approx(std::tanh(0.3)));
        CHECK(t[2] <= 1.0);
    }

    TEST_CASE("sigmoid stays inside (0,1) for large inputs") {
        const auto s = activation(Activation::Sigmoid, vec({-700.0, 700.0, -40.0, 40.0}));
        for (double v : s.data()) CHECK(std::isfinite(v));
        CHECK(s[2] > 0.0);
        CHECK(s[3] < 1.0 + 1e-15);
    }

    TEST_CASE("non-finite input is rejected") {
        CHECK_THROWS_AS(activation(Activation::Relu, vec({NAN})), Error);
        try {
            activation(Activation::Tanh, vec({INFINITY}));
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Numeric);
        }
    }

    TEST_CASE("softmax examples") {
        const auto u = softmax(vec({2.0, 2.0, 2.0}));
        for (double v : u.data()) CHECK(v == Approx(1.0 / 3.0).epsilon(1e-15));
        const auto q = softmax(vec({0.0, std::log(3.0)}));
        CHECK(q[0] == Approx(0.25).epsilon(1e-15));
        CHECK(q[1] == Approx(0.75).epsilon(1e-15));
        const auto big = softmax(vec({1000.0, 1000.0}));
        CHECK(big[0] == 0.5);
        CHECK(big[1] == 0.5);
        CHECK_THROWS_AS(softmax(Tensor<double>()), Error);
    }

    TEST_CASE("softmax sums to one, keeps argmax, is shift invariant") {
        Rng rng(5);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> z(1 + rng.index(12));
            for (double& v : z) v = rng.uniform(-50.0, 50.0);
            const auto p = softmax(vec(z));
            const double sum = std::accumulate(p.data().begin(), p.data().end(), 0.0);
            CHECK(std::abs(sum - 1.0) <= 1e-12);
            CHECK(argmax<double>(p.data()) == argmax<double>(std::span<const double>(z)));
            std::vector<double> shifted = z;
            for (double& v : shifted) v += 17.25;
            const auto ps = softmax(vec(shifted));
            for (std::size_t k = 0; k < z.size(); ++k) CHECK(ps[k] == Approx(p[k]).epsilon(1e-12));
        }
    }

    TEST_CASE("cross entropy examples") {
        CHECK(cross_entropy(vec({1.0, 0.0, 0.0}), 0).loss == Approx(0.0).epsilon(1e-11));
        CHECK(cross_entropy(vec({0.5, 0.5}), 0).loss == Approx(std::log(2.0)));
        const auto ce = cross_entropy(Tensor<double>({10}, 0.1), 7);
        CHECK(ce.loss == Approx(std::log(10.0)));
        CHECK(ce.logit_grad[7] == Approx(-0.9));
        CHECK(ce.logit_grad[0] == Approx(0.1));
        CHECK_THROWS_AS(cross_entropy(vec({0.5, 0.5}), 2), Error);
    }

    TEST_CASE("argmax prefers the lowest index on ties") {
        const std::vector<double> v{0.2, 0.4, 0.4};
        CHECK(argmax<double>(v) == 1);
    }
}

TEST_SUITE("layers") {
    TEST_CASE("dense identity and its gradients") {
        Rng rng(1);
        auto layer = make_dense<double>(2, 2, Activation::None, rng);
        auto& p = std::get<DenseParams<double>>(layer.params);
        p.weight = mat(2, 2, {1, 0, 0, 1});
        p.bias = vec({0, 0});
        const auto fwd = layer_forward(layer, mat(1, 2, {3, -1}), Mode::Infer, rng);
        CHECK(fwd.output[0] == 3.0);
        CHECK(fwd.output[1] == -1.0);
        const auto g = layer_backward(layer, fwd.trace, mat(1, 2, {0.5, 2.0}));
        CHECK(g.input_grad[0] == 0.5);
        CHECK(g.input_grad[1] == 2.0);
        // grad_W = g xᵀ
        CHECK(g.param_grads[0][0] == 1.5);
        CHECK(g.param_grads[0][1] == -0.5);
        CHECK(g.param_grads[0][2] == 6.0);
        CHECK(g.param_grads[0][3] == -2.0);
        CHECK(g.param_grads[1][0] == 0.5);
    }

    TEST_CASE("conv2d all-ones kernel on a constant image") {
        Rng rng(2);
        auto layer = make_conv2d<double>(1, 1, 2, 2, Activation::None, rng);
        auto& p = std::get<ConvParams<double>>(layer.params);
        p.kernel.fill(1.0);
        p.bias.fill(0.0);
        const auto out = layer_forward(layer, Tensor<double>({1, 3, 3, 1}, 1.0), Mode::Infer, rng).output;
        CHECK(out.shape() == Shape{1, 2, 2, 1});
        for (double v : out.data()) CHECK(v == 4.0);
    }

    TEST_CASE("conv is cross-correlation without kernel flip") {
        Rng rng(3);
        auto layer = make_conv1d<double>(1, 1, 2, Activation::None, rng);
        auto& p = std::get<ConvParams<double>>(layer.params);
        p.kernel = Tensor<double>({1, 2, 1}, std::vector<double>{1.0, 10.0});
        p.bias.fill(0.5);
        const auto out = layer_forward(layer, Tensor<double>({1, 3, 1}, std::vector<double>{1, 2, 3}), Mode::Infer, rng);
        CHECK(out.output[0] == 21.5);
        CHECK(out.output[1] == 32.5);
    }

    TEST_CASE("max pooling routes gradient to the argmax") {
        Rng rng(4);
        auto pool = make_maxpool1d<double>(4, 4);
        const auto fwd = layer_forward(pool, Tensor<double>({1, 4, 1}, std::vector<double>{1, 2, 3, 4}), Mode::Infer, rng);
        CHECK(fwd.output[0] == 4.0);
        const auto g = layer_backward(pool, fwd.trace, Tensor<double>({1, 1, 1}, 2.5));
        CHECK(as_vector(g.input_grad) == std::vector<double>{0, 0, 0, 2.5});
    }

    TEST_CASE("max pooling conserves gradient mass") {
        Rng rng(6);
        auto pool = make_maxpool2d<double>(2, 2);
        Tensor<double> x({2, 6, 4, 3});
        for (double& v : x.data()) v = rng.uniform(-1, 1);
        const auto fwd = layer_forward(pool, x, Mode::Infer, rng);
        Tensor<double> go(fwd.output.shape());
        for (double& v : go.data()) v = rng.uniform(-1, 1);
        const auto g = layer_backward(pool, fwd.trace, go);
        const double in_sum = std::accumulate(g.input_grad.data().begin(), g.input_grad.data().end(), 0.0);
        const double out_sum = std::accumulate(go.data().begin(), go.data().end(), 0.0);
        CHECK(in_sum == Approx(out_sum).epsilon(1e-12));
    }

    TEST_CASE("dropout rate zero is the identity in both modes") {
        Rng rng(7);
        auto d = make_dropout<double>(0.0);
        Tensor<double> x({3, 4});
        for (double& v : x.data()) v = rng.uniform(-1, 1);
        CHECK(layer_forward(d, x, Mode::Train, rng).output == x);
        CHECK(layer_forward(d, x, Mode::Infer, rng).output == x);
    }

    TEST_CASE("inverted dropout keeps the expectation") {
        Rng rng(8);
        auto d = make_dropout<double>(0.3);
        Tensor<double> x({1, 5}, std::vector<double>{1.0, -2.0, 0.5, 3.0, 0.25});
        std::vector<double> mean(5, 0.0);
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            const auto out = layer_forward(d, x, Mode::Train, rng).output;
            for (std::size_t k = 0; k < 5; ++k) mean[k] += out[k] / draws;
        }
        for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(mean[k] - x[k]) <= 0.02 * std::abs(x[k]));
        CHECK(layer_forward(d, x, Mode::Infer, rng).output == x);
    }

    TEST_CASE("dropout rate must lie below one") {
        CHECK_THROWS_AS(make_dropout<double>(1.0), Error);
        CHECK_THROWS_AS(make_dropout<double>(-0.1), Error);
    }

    TEST_CASE("shape errors") {
        Rng rng(9);
        auto dense = make_dense<double>(3, 2, Activation::None, rng);
        try {
            layer_forward(dense, Tensor<double>({1, 4}), Mode::Infer, rng);
            FAIL("expected a shape error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Shape);
        }
        auto conv = make_conv2d<double>(1, 1, 3, 3, Activation::None, rng);
        CHECK_THROWS_AS(layer_forward(conv, Tensor<double>({1, 2, 2, 1}), Mode::Infer, rng), Error);
    }

    TEST_CASE("mismatched trace is rejected") {
        Rng rng(10);
        auto dense = make_dense<double>(2, 2, Activation::None, rng);
        auto pool = make_maxpool1d<double>(2, 2);
        const auto fwd = layer_forward(pool, Tensor<double>({1, 4, 1}), Mode::Infer, rng);
        try {
            layer_backward(dense, fwd.trace, Tensor<double>({1, 2}));
            FAIL("expected a trace error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Trace);
        }
    }

    TEST_CASE("glorot initialization bounds, zero biases") {
        Rng rng(11);
        auto dense = make_dense<double>(30, 20, Activation::None, rng);
        const auto& p = std::get<DenseParams<double>>(dense.params);
        const double limit = std::sqrt(6.0 / 50.0);
        for (double w : p.weight.data()) CHECK(std::abs(w) <= limit);
        for (double b : p.bias.data()) CHECK(b == 0.0);
    }
}

TEST_SUITE("recurrent") {
    TEST_CASE("simple rnn degenerate cases and a hand example") {
        Rng rng(12);
        auto layer = make_simple_rnn<double>(2, 2, false, rng);
        auto& c = std::get<SimpleRNNCell<double>>(layer.params);
        c.w_rec.fill(0);
        c.w_in.fill(0);
        c.bias.fill(0);
        CHECK(as_vector(simple_rnn_step(c, vec({0.3, -0.2}), vec({5, 6}))) == std::vector<double>{0, 0});
        c.w_in = mat(2, 2, {1, 0, 0, 1});
        CHECK(as_vector(simple_rnn_step(c, vec({0.3, -0.2}), vec({5, 6}))) == std::vector<double>{5, 6});
        c.w_rec = mat(2, 2, {0.5, -1.0, 2.0, 0.25});
        c.w_in = mat(2, 2, {1.0, 2.0, -1.0, 0.5});
        c.bias = vec({0.1, -0.1});
        const double t0 = std::tanh(0.3), t1 = std::tanh(-0.2);
        const auto x = simple_rnn_step(c, vec({0.3, -0.2}), vec({1.0, 2.0}));
        CHECK(x[0] == Approx(0.5 * t0 - 1.0 * t1 + 1.0 + 4.0 + 0.1).epsilon(1e-14));
        CHECK(x[1] == Approx(2.0 * t0 + 0.25 * t1 - 1.0 + 1.0 - 0.1).epsilon(1e-14));
        CHECK_THROWS_AS(simple_rnn_step(c, vec({0.3}), vec({1.0, 2.0})), Error);
    }

    TEST_CASE("lstm closed forms with zero weights") {
        Rng rng(13);
        auto layer = make_lstm<double>(2, 3, false, rng);
        auto& c = std::get<LSTMCell<double>>(layer.params);
        for (Tensor<double>* t : layer.parameters()) t->fill(0.0);
        const auto s0 = lstm_step(c, vec({1, -1}), zeros({3}), zeros({3}));
        for (double v : s0.c.data()) CHECK(v == 0.0);
        for (double v : s0.h.data()) CHECK(v == 0.0);
        const auto s1 = lstm_step(c, vec({1, -1}), vec({0.2, 0.1, -0.4}), vec({1.0, -3.0, 0.7}));
        const std::vector<double> cprev{1.0, -3.0, 0.7};
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(s1.c[k] == 0.5 * cprev[k]);
            CHECK(s1.h[k] == Approx(0.5 * std::tanh(0.5 * cprev[k])).epsilon(1e-15));
        }
    }

    TEST_CASE("lstm matches the scalar oracle, single steps and T=3 chain") {
        Rng rng(14);
        auto layer = make_lstm<double>(3, 2, false, rng);
        auto& c = std::get<LSTMCell<double>>(layer.params);
        for (Tensor<double>* t : layer.parameters())
            for (double& v : t->data()) v = rng.uniform(-1, 1);
        const ScalarLSTM oracle{3, 2, as_vector(c.w_i), as_vector(c.w_f), as_vector(c.w_o), as_vector(c.w_c),
                                as_vector(c.b_i), as_vector(c.b_f), as_vector(c.b_o), as_vector(c.b_c)};
        std::vector<double> h{0, 0}, cs{0, 0};
        Tensor<double> seq({3, 3});
        for (double& v : seq.data()) v = rng.uniform(-1, 1);
        Tensor<double> th = zeros({2}), tc = zeros({2});
        for (std::size_t t = 0; t < 3; ++t) {
            const std::vector<double> x(seq.row(t).begin(), seq.row(t).end());
            std::tie(h, cs) = oracle.step(x, h, cs);
            const auto s = lstm_step(c, vec(x), th, tc);
            th = s.h;
            tc = s.c;
            for (std::size_t k = 0; k < 2; ++k) {
                CHECK(th[k] == Approx(h[k]).epsilon(1e-13));
                CHECK(tc[k] == Approx(cs[k]).epsilon(1e-13));
            }
        }
        const std::vector<Layer<double>> stack{layer};
        const auto res = sequence_forward<double>(stack, seq, Mode::Infer);
        for (std::size_t k = 0; k < 2; ++k) CHECK(res.final_state[k] == Approx(h[k]).epsilon(1e-13));
    }

    TEST_CASE("gru closed forms and scalar oracle") {
        Rng rng(15);
        auto layer = make_gru<double>(2, 2, false, rng);
        auto& c = std::get<GRUCell<double>>(layer.params);
        for (Tensor<double>* t : layer.parameters()) t->fill(0.0);
        const auto zero_out = gru_step(c, vec({3, 4}), zeros({2}));
        for (double v : zero_out.data()) CHECK(v == 0.0);
        const auto half = gru_step(c, vec({3, 4}), vec({0.8, -0.6}));
        CHECK(half[0] == 0.4);
        CHECK(half[1] == -0.3);

        for (Tensor<double>* t : layer.parameters())
            for (double& v : t->data()) v = rng.uniform(-1, 1);
        const ScalarGRU oracle{2, 2, as_vector(c.w_z), as_vector(c.u_z), as_vector(c.b_z), as_vector(c.w_r),
                               as_vector(c.u_r), as_vector(c.b_r), as_vector(c.w_h), as_vector(c.u_h), as_vector(c.b_h)};
        const std::vector<double> x{0.3, -0.7}, h{0.1, 0.5};
        const auto expect = oracle.step(x, h);
        const auto got = gru_step(c, vec(x), vec(h));
        for (std::size_t k = 0; k < 2; ++k) CHECK(got[k] == Approx(expect[k]).epsilon(1e-13));
    }

    TEST_CASE("sequence_forward equals manual stepping bitwise") {
        Rng rng(16);
        for (LayerKind kind : {LayerKind::SimpleRNN, LayerKind::LSTM, LayerKind::GRU}) {
            const auto layer = kind == LayerKind::SimpleRNN ? make_simple_rnn<double>(3, 4, false, rng)
                               : kind == LayerKind::LSTM    ? make_lstm<double>(3, 4, false, rng)
                                                            : make_gru<double>(3, 4, false, rng);
            Tensor<double> seq({5, 3});
            for (double& v : seq.data()) v = rng.uniform(-1, 1);
            Tensor<double> h = zeros({4}), cell = zeros({4});
            for (std::size_t t = 0; t < 5; ++t) {
                Tensor<double> x({3}, std::vector<double>(seq.row(t).begin(), seq.row(t).end()));
                if (kind == LayerKind::SimpleRNN) {
                    h = simple_rnn_step(std::get<SimpleRNNCell<double>>(layer.params), h, x);
                } else if (kind == LayerKind::LSTM) {
                    auto s = lstm_step(std::get<LSTMCell<double>>(layer.params), x, h, cell);
                    h = s.h;
                    cell = s.c;
                } else {
                    h = gru_step(std::get<GRUCell<double>>(layer.params), x, h);
                }
            }
            const std::vector<Layer<double>> stack{layer};
            const auto res = sequence_forward<double>(stack, seq, Mode::Infer);
            CHECK(as_vector(res.final_state) == as_vector(h));
        }
    }

    TEST_CASE("sequence edge cases") {
        Rng rng(17);
        auto gru = make_gru<double>(2, 3, false, rng);
        for (Tensor<double>* t : gru.parameters()) t->fill(0.0);
        const std::vector<Layer<double>> stack{gru};
        Tensor<double> seq({4, 2});
        for (double& v : seq.data()) v = rng.uniform(-5, 5);
        const auto zero_run = sequence_forward<double>(stack, seq, Mode::Infer);
        for (double v : zero_run.final_state.data()) CHECK(v == 0.0);
        try {
            sequence_forward<double>(stack, Tensor<double>(), Mode::Infer);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Shape);
        }
        // T = 1 equals one step from the zero state.
        auto lstm = make_lstm<double>(2, 3, false, rng);
        const std::vector<Layer<double>> one{lstm};
        const auto r = sequence_forward<double>(one, Tensor<double>({1, 2}, std::vector<double>{0.4, -0.9}), Mode::Infer);
        const auto s = lstm_step(std::get<LSTMCell<double>>(lstm.params), vec({0.4, -0.9}), zeros({3}), zeros({3}));
        CHECK(as_vector(r.final_state) == as_vector(s.h));
    }
}

TEST_SUITE("model") {
    TEST_CASE("zero dense head gives a uniform output") {
        ModelSpec spec;
        spec.input_shape = {3};
        spec.classes = 2;
        spec.layers = {dense_spec(2, Activation::None)};
        auto model = build_model<double>(spec);
        for (Tensor<double>* t : model.parameters()) t->fill(0.0);
        Rng rng(0);
        const auto out = model_forward(model, vec({1, 2, 3}), Mode::Infer, rng);
        CHECK(out.probs[0] == 0.5);
        CHECK(out.probs[1] == 0.5);
    }

    TEST_CASE("dropout model is deterministic in inference") {
        ModelSpec spec;
        spec.input_shape = {4};
        spec.classes = 3;
        spec.layers = {dense_spec(8, Activation::Relu), dropout_spec(0.5), dense_spec(3, Activation::None)};
        const auto model = build_model<double>(spec);
        Rng a(1), b(2);
        const Tensor<double> x = vec({0.1, 0.2, -0.3, 0.4});
        CHECK(model_forward(model, x, Mode::Infer, a).probs == model_forward(model, x, Mode::Infer, b).probs);
    }

    TEST_CASE("input shape mismatch") {
        ModelSpec spec;
        spec.input_shape = {4};
        spec.classes = 2;
        spec.layers = {dense_spec(2, Activation::None)};
        const auto model = build_model<double>(spec);
        Rng rng(0);
        CHECK_THROWS_AS(model_forward(model, vec({1, 2, 3}), Mode::Infer, rng), Error);
    }

    TEST_CASE("spec validation") {
        ModelSpec spec;
        spec.input_shape = {4};
        spec.classes = 2;
        spec.layers = {dense_spec(3, Activation::None)};
        CHECK_THROWS_AS(spec.validate(), Error);
        spec.layers = {dense_spec(2, Activation::None)};
        spec.family = Family::RNN;
        CHECK_THROWS_AS(spec.validate(), Error);
        spec.family = Family::CNN;
        CHECK_THROWS_AS(spec.validate(), Error);
    }

    TEST_CASE("one-parameter linear model with squared loss") {
        std::vector<double> w{0.7};
        const double x = 1.3, y = -0.4;
        auto loss = [&] { return 0.5 * (w[0] * x - y) * (w[0] * x - y); };
        const std::vector<double> analytic{(w[0] * x - y) * x};
        CHECK(check_gradients(w, loss, analytic, 1e-4) <= 1e-7);
    }

    TEST_CASE("gradient checks on random small networks") {
        // Mixed absolute/relative bound; the acceptance runner applies the
        // strict relative criterion.
        for (GradCase c : kAllGradCases) {
            CAPTURE(name(c));
            for (std::uint64_t s = 0; s < 10; ++s) {
                GradProblem p = make_grad_problem(c, derive_seed(77, {static_cast<std::uint64_t>(c), s}));
                Model<double> model = build_model<double>(p.spec);
                if (pooling_margin(model, p.batch) < 1e-3) continue;
                Rng rng(3);
                const auto analytic = loss_and_gradients(model, p.batch, p.labels, p.mode, rng);
                auto params = model.parameters();
                for (std::size_t i = 0; i < params.size(); ++i)
                    for (std::size_t k = 0; k < params[i]->size(); ++k) {
                        double& v = (*params[i])[k];
                        const double saved = v;
                        v = saved + 1e-5;
                        Rng up_rng(3);
                        const double up = batch_loss(model, p.batch, p.labels, p.mode, up_rng);
                        v = saved - 1e-5;
                        Rng down_rng(3);
                        const double down = batch_loss(model, p.batch, p.labels, p.mode, down_rng);
                        v = saved;
                        const double numeric = (up - down) / 2e-5;
                        const double a = analytic.grads[i][k];
                        CHECK(std::abs(a - numeric) <= 1e-5 * std::max(std::abs(a), std::abs(numeric)) + 1e-9);
                    }
            }
        }
    }

    TEST_CASE("dropout gradients in train mode with a fixed mask") {
        ModelSpec spec;
        spec.input_shape = {5};
        spec.classes = 3;
        spec.seed = 4;
        spec.layers = {dense_spec(6, Activation::Tanh), dropout_spec(0.4), dense_spec(3, Activation::None)};
        Model<double> model = build_model<double>(spec);
        Tensor<double> batch({2, 5});
        Rng rng(5);
        for (double& v : batch.data()) v = rng.uniform(-1, 1);
        const std::vector<std::size_t> labels{0, 2};
        CHECK(check_gradients(model, batch, labels, 1e-4, Mode::Train, 11) <= 1e-4);
    }

    TEST_CASE("relu derivative away from the kink") {
        ModelSpec spec;
        spec.input_shape = {4};
        spec.classes = 2;
        spec.seed = 9;
        spec.layers = {dense_spec(5, Activation::Relu), dense_spec(2, Activation::None)};
        Model<double> model = build_model<double>(spec);
        auto& first = std::get<DenseParams<double>>(model.layers[0].params);
        first.bias = vec({0.3, -0.3, 0.5, -0.5, 0.2});
        const Tensor<double> batch({1, 4}, std::vector<double>{0.01, -0.02, 0.03, 0.015});
        const std::vector<std::size_t> labels{1};
        CHECK(check_gradients(model, batch, labels, 1e-4) <= 1e-4);
    }

    TEST_CASE("every sampled spec outputs K probabilities") {
        // Spot-checked with the ensemble sampler in its own suite; here the
        // property is checked over hand-varied class counts.
        for (std::size_t k = 1; k <= 6; ++k) {
            ModelSpec spec;
            spec.input_shape = {3, 2};
            spec.classes = k;
            spec.family = Family::RNN;
            spec.layers = {layer_spec(LayerKind::GRU, 3), dense_spec(k, Activation::None)};
            const auto model = build_model<double>(spec);
            Rng rng(0);
            const auto out = model_forward(model, Tensor<double>({3, 2}, 0.5), Mode::Infer, rng);
            CHECK(out.probs.size() == k);
        }
    }
}
