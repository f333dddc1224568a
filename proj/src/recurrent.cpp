#include <cmath>

#include "rmdl/kernels.hpp"
#include "rmdl/layers.hpp"

namespace rmdl {

namespace {

template <typename T>
Tensor<T> as_batch(const Tensor<T>& v) {
    if (v.rank() == 1) return v.reshaped({1, v.dim(0)});
    if (v.rank() == 2) return v;
    fail(ErrorKind::Shape, "recurrent step expects a vector or [batch x n] matrix, got " + shape_str(v.shape()));
}

template <typename T>
void expect_cols(const Tensor<T>& m, std::size_t batch, std::size_t cols, const char* what) {
    if (m.dim(0) != batch || m.dim(1) != cols)
        fail(ErrorKind::Shape, std::string(what) + " must be [" + std::to_string(batch) + " x " +
                                   std::to_string(cols) + "], got " + shape_str(m.shape()));
}

/// out = a·Wᵀ (+ b·Uᵀ) + bias, rows of `a` are samples.
template <typename T>
Tensor<T> affine(const Tensor<T>& a, const Tensor<T>& w, const Tensor<T>* b, const Tensor<T>* u,
                 const Tensor<T>& bias) {
    const std::size_t batch = a.dim(0), out = w.dim(0);
    Tensor<T> z({batch, out});
    kernels::gemm_nt<T>(batch, out, w.dim(1), a.data(), w.data(), z.data(), false);
    if (b) kernels::gemm_nt<T>(batch, out, u->dim(1), b->data(), u->data(), z.data(), true);
    kernels::add_row_bias<T>(batch, out, bias.data(), z.data());
    return z;
}

template <typename T>
Tensor<T> step_slice(const Tensor<T>& seq, std::size_t t) {
    const std::size_t batch = seq.dim(0), steps = seq.dim(1), width = seq.dim(2);
    Tensor<T> out({batch, width});
    for (std::size_t b = 0; b < batch; ++b)
        std::copy_n(seq.ptr() + (b * steps + t) * width, width, out.ptr() + b * width);
    return out;
}

template <typename T>
void add_step_slice(Tensor<T>& seq, std::size_t t, const Tensor<T>& values) {
    const std::size_t batch = seq.dim(0), steps = seq.dim(1), width = seq.dim(2);
    for (std::size_t b = 0; b < batch; ++b) {
        T* dst = seq.ptr() + (b * steps + t) * width;
        const T* src = values.ptr() + b * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
}

template <typename T>
void accumulate_outer(Tensor<T>& grad, const Tensor<T>& delta, const Tensor<T>& activations) {
    // grad[out × in] += deltaᵀ[out × B] · activations[B × in]
    kernels::gemm_tn<T>(grad.dim(0), grad.dim(1), delta.dim(0), delta.data(), activations.data(), grad.data(), true);
}

} // namespace

namespace detail {

template <typename T>
void simple_rnn_step_cached(const SimpleRNNCell<T>& cell, const Tensor<T>& prev_state, const Tensor<T>& input,
                            StepCache<T>& cache) {
    const std::size_t batch = input.dim(0);
    expect_cols(input, batch, cell.input_size(), "input");
    expect_cols(prev_state, batch, cell.hidden_size(), "previous state");
    cache.prev = prev_state;
    for (T& v : cache.prev.data()) v = std::tanh(v);
    cache.input = input;
    cache.state = affine(cache.prev, cell.w_rec, &cache.input, &cell.w_in, cell.bias);
}

template <typename T>
void lstm_step_cached(const LSTMCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                      StepCache<T>& cache) {
    const std::size_t batch = x.dim(0), in = cell.input_size(), hidden = cell.hidden_size();
    expect_cols(x, batch, in, "input");
    expect_cols(h_prev, batch, hidden, "previous hidden state");
    expect_cols(c_prev, batch, hidden, "previous cell state");
    cache.input = Tensor<T>({batch, in + hidden});
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(x.ptr() + b * in, in, cache.input.ptr() + b * (in + hidden));
        std::copy_n(h_prev.ptr() + b * hidden, hidden, cache.input.ptr() + b * (in + hidden) + in);
    }
    cache.prev = c_prev;
    cache.gate_a = affine<T>(cache.input, cell.w_i, nullptr, nullptr, cell.b_i);
    cache.candidate = affine<T>(cache.input, cell.w_c, nullptr, nullptr, cell.b_c);
    cache.gate_b = affine<T>(cache.input, cell.w_f, nullptr, nullptr, cell.b_f);
    cache.gate_c = affine<T>(cache.input, cell.w_o, nullptr, nullptr, cell.b_o);
    activate_inplace(Activation::Sigmoid, cache.gate_a.data());
    activate_inplace(Activation::Tanh, cache.candidate.data());
    activate_inplace(Activation::Sigmoid, cache.gate_b.data());
    activate_inplace(Activation::Sigmoid, cache.gate_c.data());
    cache.cell = Tensor<T>({batch, hidden});
    cache.cell_tanh = Tensor<T>({batch, hidden});
    cache.state = Tensor<T>({batch, hidden});
    for (std::size_t e = 0; e < batch * hidden; ++e) {
        cache.cell[e] = cache.gate_a[e] * cache.candidate[e] + cache.gate_b[e] * c_prev[e];
        cache.cell_tanh[e] = std::tanh(cache.cell[e]);
        cache.state[e] = cache.gate_c[e] * cache.cell_tanh[e];
    }
}

template <typename T>
void gru_step_cached(const GRUCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev, StepCache<T>& cache) {
    const std::size_t batch = x.dim(0), hidden = cell.hidden_size();
    expect_cols(x, batch, cell.input_size(), "input");
    expect_cols(h_prev, batch, hidden, "previous hidden state");
    cache.input = x;
    cache.prev = h_prev;
    cache.gate_a = affine(x, cell.w_z, &h_prev, &cell.u_z, cell.b_z);
    cache.gate_b = affine(x, cell.w_r, &h_prev, &cell.u_r, cell.b_r);
    activate_inplace(Activation::Sigmoid, cache.gate_a.data());
    activate_inplace(Activation::Sigmoid, cache.gate_b.data());
    cache.gate_c = Tensor<T>({batch, hidden});
    for (std::size_t e = 0; e < batch * hidden; ++e) cache.gate_c[e] = cache.gate_b[e] * h_prev[e];
    cache.candidate = affine(x, cell.w_h, &cache.gate_c, &cell.u_h, cell.b_h);
    activate_inplace(Activation::Tanh, cache.candidate.data());
    cache.state = Tensor<T>({batch, hidden});
    for (std::size_t e = 0; e < batch * hidden; ++e) {
        const T z = cache.gate_a[e];
        cache.state[e] = z * h_prev[e] + (T{1} - z) * cache.candidate[e];
    }
}

template <typename T>
LayerResult<T> recurrent_forward(const Layer<T>& layer, const Tensor<T>& input) {
    const std::size_t batch = input.dim(0), steps = input.dim(1);
    LayerResult<T> r;
    r.trace.kind = layer.kind;
    r.trace.input_shape = input.shape();
    r.trace.steps.resize(steps);

    std::size_t hidden = 0;
    std::visit(
        [&](const auto& p) {
            if constexpr (requires { p.hidden_size(); }) hidden = p.hidden_size();
        },
        layer.params);

    Tensor<T> h({batch, hidden});
    Tensor<T> c({batch, hidden});
    for (std::size_t t = 0; t < steps; ++t) {
        const Tensor<T> x = step_slice(input, t);
        StepCache<T>& cache = r.trace.steps[t];
        switch (layer.kind) {
        case LayerKind::SimpleRNN: simple_rnn_step_cached(std::get<SimpleRNNCell<T>>(layer.params), h, x, cache); break;
        case LayerKind::LSTM:
            lstm_step_cached(std::get<LSTMCell<T>>(layer.params), x, h, c, cache);
            c = cache.cell;
            break;
        case LayerKind::GRU: gru_step_cached(std::get<GRUCell<T>>(layer.params), x, h, cache); break;
        default: fail(ErrorKind::Trace, "not a recurrent layer");
        }
        h = cache.state;
    }

    if (layer.return_sequences) {
        r.output = Tensor<T>({batch, steps, hidden});
        for (std::size_t t = 0; t < steps; ++t) add_step_slice(r.output, t, r.trace.steps[t].state);
    } else {
        r.output = std::move(h);
    }
    return r;
}

template <typename T>
LayerGradients<T> recurrent_backward(const Layer<T>& layer, const LayerTrace<T>& trace, const Tensor<T>& grad_out) {
    const std::size_t batch = trace.input_shape[0], steps = trace.input_shape[1], in = trace.input_shape[2];
    if (trace.steps.size() != steps) fail(ErrorKind::Trace, "recurrent trace step count mismatch");

    LayerGradients<T> r;
    r.input_grad = Tensor<T>(trace.input_shape);
    for (const Tensor<T>* p : layer.parameters()) r.param_grads.emplace_back(p->shape());

    const std::size_t hidden = trace.steps.back().state.dim(1);
    Tensor<T> dh_next({batch, hidden});
    Tensor<T> dc_next({batch, hidden});

    for (std::size_t t = steps; t-- > 0;) {
        const StepCache<T>& s = trace.steps[t];
        Tensor<T> dh = dh_next;
        if (layer.return_sequences) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t j = 0; j < hidden; ++j) dh[b * hidden + j] += grad_out[(b * steps + t) * hidden + j];
        } else if (t + 1 == steps) {
            for (std::size_t e = 0; e < batch * hidden; ++e) dh[e] += grad_out[e];
        }

        Tensor<T> dx({batch, in});
        switch (layer.kind) {
        case LayerKind::SimpleRNN: {
            const auto& cell = std::get<SimpleRNNCell<T>>(layer.params);
            accumulate_outer(r.param_grads[0], dh, s.prev);
            accumulate_outer(r.param_grads[1], dh, s.input);
            kernels::column_sums<T>(batch, hidden, dh.data(), r.param_grads[2].data(), true);
            kernels::gemm_nn<T>(batch, hidden, hidden, dh.data(), cell.w_rec.data(), dh_next.data(), false);
            for (std::size_t e = 0; e < batch * hidden; ++e) dh_next[e] *= T{1} - s.prev[e] * s.prev[e];
            kernels::gemm_nn<T>(batch, in, hidden, dh.data(), cell.w_in.data(), dx.data(), false);
            break;
        }
        case LayerKind::LSTM: {
            const auto& cell = std::get<LSTMCell<T>>(layer.params);
            Tensor<T> dpre_i({batch, hidden}), dpre_f({batch, hidden}), dpre_o({batch, hidden}),
                dpre_c({batch, hidden});
            for (std::size_t e = 0; e < batch * hidden; ++e) {
                const T i = s.gate_a[e], f = s.gate_b[e], o = s.gate_c[e], cand = s.candidate[e];
                const T tc = s.cell_tanh[e];
                const T dc = dc_next[e] + dh[e] * o * (T{1} - tc * tc);
                dpre_o[e] = dh[e] * tc * o * (T{1} - o);
                dpre_i[e] = dc * cand * i * (T{1} - i);
                dpre_f[e] = dc * s.prev[e] * f * (T{1} - f);
                dpre_c[e] = dc * i * (T{1} - cand * cand);
                dc_next[e] = dc * f;
            }
            const std::size_t cols = in + hidden;
            Tensor<T> dxh({batch, cols});
            const Tensor<T>* weights[] = {&cell.w_i, &cell.w_f, &cell.w_o, &cell.w_c};
            const Tensor<T>* deltas[] = {&dpre_i, &dpre_f, &dpre_o, &dpre_c};
            for (std::size_t g = 0; g < 4; ++g) {
                accumulate_outer(r.param_grads[g], *deltas[g], s.input);
                kernels::column_sums<T>(batch, hidden, deltas[g]->data(), r.param_grads[4 + g].data(), true);
                kernels::gemm_nn<T>(batch, cols, hidden, deltas[g]->data(), weights[g]->data(), dxh.data(), g > 0);
            }
            for (std::size_t b = 0; b < batch; ++b) {
                std::copy_n(dxh.ptr() + b * cols, in, dx.ptr() + b * in);
                std::copy_n(dxh.ptr() + b * cols + in, hidden, dh_next.ptr() + b * hidden);
            }
            break;
        }
        case LayerKind::GRU: {
            const auto& cell = std::get<GRUCell<T>>(layer.params);
            Tensor<T> dpre_z({batch, hidden}), dpre_r({batch, hidden}), dpre_n({batch, hidden});
            for (std::size_t e = 0; e < batch * hidden; ++e) {
                const T z = s.gate_a[e], n = s.candidate[e];
                dpre_z[e] = dh[e] * (s.prev[e] - n) * z * (T{1} - z);
                dpre_n[e] = dh[e] * (T{1} - z) * (T{1} - n * n);
                dh_next[e] = dh[e] * z;
            }
            // d(r∘h) = dpre_n · U_h
            Tensor<T> drh({batch, hidden});
            kernels::gemm_nn<T>(batch, hidden, hidden, dpre_n.data(), cell.u_h.data(), drh.data(), false);
            for (std::size_t e = 0; e < batch * hidden; ++e) {
                const T rr = s.gate_b[e];
                dpre_r[e] = drh[e] * s.prev[e] * rr * (T{1} - rr);
                dh_next[e] += drh[e] * rr;
            }
            accumulate_outer(r.param_grads[0], dpre_z, s.input);
            accumulate_outer(r.param_grads[1], dpre_z, s.prev);
            kernels::column_sums<T>(batch, hidden, dpre_z.data(), r.param_grads[2].data(), true);
            accumulate_outer(r.param_grads[3], dpre_r, s.input);
            accumulate_outer(r.param_grads[4], dpre_r, s.prev);
            kernels::column_sums<T>(batch, hidden, dpre_r.data(), r.param_grads[5].data(), true);
            accumulate_outer(r.param_grads[6], dpre_n, s.input);
            accumulate_outer(r.param_grads[7], dpre_n, s.gate_c);
            kernels::column_sums<T>(batch, hidden, dpre_n.data(), r.param_grads[8].data(), true);

            kernels::gemm_nn<T>(batch, in, hidden, dpre_z.data(), cell.w_z.data(), dx.data(), false);
            kernels::gemm_nn<T>(batch, in, hidden, dpre_r.data(), cell.w_r.data(), dx.data(), true);
            kernels::gemm_nn<T>(batch, in, hidden, dpre_n.data(), cell.w_h.data(), dx.data(), true);
            kernels::gemm_nn<T>(batch, hidden, hidden, dpre_z.data(), cell.u_z.data(), dh_next.data(), true);
            kernels::gemm_nn<T>(batch, hidden, hidden, dpre_r.data(), cell.u_r.data(), dh_next.data(), true);
            break;
        }
        default: fail(ErrorKind::Trace, "not a recurrent layer");
        }
        add_step_slice(r.input_grad, t, dx);
    }
    return r;
}

} // namespace detail

template <typename T>
Tensor<T> simple_rnn_step(const SimpleRNNCell<T>& cell, const Tensor<T>& prev_state, const Tensor<T>& input) {
    StepCache<T> cache;
    detail::simple_rnn_step_cached(cell, as_batch(prev_state), as_batch(input), cache);
    if (input.rank() == 1) cache.state.reshape({cell.hidden_size()});
    return cache.state;
}

template <typename T>
LSTMState<T> lstm_step(const LSTMCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev) {
    StepCache<T> cache;
    detail::lstm_step_cached(cell, as_batch(x), as_batch(h_prev), as_batch(c_prev), cache);
    if (x.rank() == 1) {
        cache.state.reshape({cell.hidden_size()});
        cache.cell.reshape({cell.hidden_size()});
    }
    return {std::move(cache.state), std::move(cache.cell)};
}

template <typename T>
Tensor<T> gru_step(const GRUCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev) {
    StepCache<T> cache;
    detail::gru_step_cached(cell, as_batch(x), as_batch(h_prev), cache);
    if (x.rank() == 1) cache.state.reshape({cell.hidden_size()});
    return cache.state;
}

template <typename T>
SequenceResult<T> sequence_forward(std::span<const Layer<T>> stack, const Tensor<T>& sequence, Mode mode) {
    if (sequence.empty()) fail(ErrorKind::Shape, "empty sequence");
    if (stack.empty()) fail(ErrorKind::Config, "empty recurrent stack");
    Tensor<T> current = sequence.rank() == 2 ? sequence.reshaped({1, sequence.dim(0), sequence.dim(1)}) : sequence;
    SequenceResult<T> r;
    Rng unused(0);
    for (const Layer<T>& layer : stack) {
        if (!is_recurrent(layer.kind))
            fail(ErrorKind::Config, std::string(to_string(layer.kind)) + " layer in a recurrent stack");
        LayerResult<T> step = layer_forward(layer, current, mode, unused);
        current = std::move(step.output);
        r.trace.push_back(std::move(step.trace));
    }
    if (current.rank() == 3) current = step_slice(current, current.dim(1) - 1);
    r.final_state = std::move(current);
    return r;
}

#define RMDL_INSTANTIATE_RECURRENT(T)                                                                              \
    template Tensor<T> simple_rnn_step<T>(const SimpleRNNCell<T>&, const Tensor<T>&, const Tensor<T>&);            \
    template LSTMState<T> lstm_step<T>(const LSTMCell<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
    template Tensor<T> gru_step<T>(const GRUCell<T>&, const Tensor<T>&, const Tensor<T>&);                         \
    template SequenceResult<T> sequence_forward<T>(std::span<const Layer<T>>, const Tensor<T>&, Mode);             \
    namespace detail {                                                                                             \
    template void simple_rnn_step_cached<T>(const SimpleRNNCell<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                            StepCache<T>&);                                                        \
    template void lstm_step_cached<T>(const LSTMCell<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      StepCache<T>&);                                                              \
    template void gru_step_cached<T>(const GRUCell<T>&, const Tensor<T>&, const Tensor<T>&, StepCache<T>&);         \
    template LayerResult<T> recurrent_forward<T>(const Layer<T>&, const Tensor<T>&);                               \
    template LayerGradients<T> recurrent_backward<T>(const Layer<T>&, const LayerTrace<T>&, const Tensor<T>&);     \
    }

RMDL_INSTANTIATE_RECURRENT(float)
RMDL_INSTANTIATE_RECURRENT(double)

#undef RMDL_INSTANTIATE_RECURRENT

} // namespace rmdl
