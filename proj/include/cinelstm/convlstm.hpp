#pragma once

// Peephole ConvLSTM cell and the per-cardiac-cycle chain with circular
// state wiring.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cinelstm/random.hpp"
#include "cinelstm/tensor.hpp"

namespace cinelstm {

template <typename T>
struct ConvLstmParams {
  // Input-to-gate kernels [hidden, in, k, k].
  Tensor<T> w_xi, w_xf, w_xc, w_xo;
  // State-to-gate kernels [hidden, hidden, k, k].
  Tensor<T> w_hi, w_hf, w_hc, w_ho;
  // Peephole weights, elementwise, shaped like the cell state.
  Tensor<T> w_ci, w_cf, w_co;
  Tensor<T> b_i, b_f, b_c, b_o;

  std::size_t in_channels() const { return w_xi.shape()[1]; }
  std::size_t hidden_channels() const { return w_xi.shape()[0]; }
  std::size_t kernel_size() const { return w_xi.shape()[2]; }
  std::size_t height() const { return w_ci.height(); }
  std::size_t width() const { return w_ci.width(); }

  // Visits every parameter in the fixed serialization order.
  template <typename F>
  void visit(F&& f) {
    f("W_xi", w_xi), f("W_xf", w_xf), f("W_xc", w_xc), f("W_xo", w_xo);
    f("W_hi", w_hi), f("W_hf", w_hf), f("W_hc", w_hc), f("W_ho", w_ho);
    f("W_ci", w_ci), f("W_cf", w_cf), f("W_co", w_co);
    f("b_i", b_i), f("b_f", b_f), f("b_c", b_c), f("b_o", b_o);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ConvLstmParams*>(this)->visit([&](const char* name, Tensor<T>& t) { f(name, std::as_const(t)); });
  }
};

template <typename T>
struct CellState {
  Tensor<T> h;
  Tensor<T> c;

  static CellState zeros(std::size_t channels, std::size_t height, std::size_t width) {
    const Shape s = Shape::chw(channels, height, width);
    return {Tensor<T>::zeros(s), Tensor<T>::zeros(s)};
  }
};

struct CycleConfig {
  std::size_t frames = 25;  // M_LSTM
  std::size_t passes = 2;   // circular unroll passes

  void validate() const {
    if (frames < 1) throw std::invalid_argument("cycle config: frames must be >= 1");
    if (passes < 1) throw std::invalid_argument("cycle config: passes must be >= 1");
  }
};

// All-zero parameter set with the right shapes.
template <typename T>
ConvLstmParams<T> zero_convlstm(std::size_t in_ch, std::size_t hidden_ch, std::size_t height, std::size_t width,
                                std::size_t kernel = 3) {
  ConvLstmParams<T> p;
  const Shape wx = Shape::kernel(hidden_ch, in_ch, kernel, kernel);
  const Shape wh = Shape::kernel(hidden_ch, hidden_ch, kernel, kernel);
  const Shape peep = Shape::chw(hidden_ch, height, width);
  const Shape bias = Shape::vec(hidden_ch);
  p.w_xi = p.w_xf = p.w_xc = p.w_xo = Tensor<T>::zeros(wx);
  p.w_hi = p.w_hf = p.w_hc = p.w_ho = Tensor<T>::zeros(wh);
  p.w_ci = p.w_cf = p.w_co = Tensor<T>::zeros(peep);
  p.b_i = p.b_f = p.b_c = p.b_o = Tensor<T>::zeros(bias);
  return p;
}

// Kernels uniform in +-1/sqrt(fan_in), peepholes zero, forget bias +1.
template <typename T>
ConvLstmParams<T> init_convlstm(std::size_t in_ch, std::size_t hidden_ch, std::size_t height, std::size_t width,
                                Rng& rng, std::size_t kernel = 3) {
  ConvLstmParams<T> p = zero_convlstm<T>(in_ch, hidden_ch, height, width, kernel);
  auto fill = [&](Tensor<T>& t, std::size_t fan_in) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    t = Tensor<T>(t.shape());
    for (T& v : t.mutable_data()) v = static_cast<T>(bound * dist(rng));
  };
  const std::size_t fan_x = in_ch * kernel * kernel;
  const std::size_t fan_h = hidden_ch * kernel * kernel;
  for (Tensor<T>* w : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo}) fill(*w, fan_x);
  for (Tensor<T>* w : {&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho}) fill(*w, fan_h);
  p.b_f = Tensor<T>(Shape::vec(hidden_ch), T(1));
  return p;
}

namespace detail {

inline void check_gate(bool ok, const char* gate, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string("cell_step (") + gate + " gate): " + what);
}

template <typename T>
void check_params(const ConvLstmParams<T>& p) {
  const std::size_t hid = p.hidden_channels(), in = p.in_channels(), k = p.kernel_size();
  const Shape wx = Shape::kernel(hid, in, k, k);
  const Shape wh = Shape::kernel(hid, hid, k, k);
  const Shape peep = Shape::chw(hid, p.height(), p.width());
  const Shape bias = Shape::vec(hid);
  const char* gates[4] = {"input", "forget", "cell", "output"};
  const Tensor<T>* xs[4] = {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo};
  const Tensor<T>* hs[4] = {&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho};
  const Tensor<T>* bs[4] = {&p.b_i, &p.b_f, &p.b_c, &p.b_o};
  const Tensor<T>* cs[4] = {&p.w_ci, &p.w_cf, nullptr, &p.w_co};
  for (int g = 0; g < 4; ++g) {
    check_gate(xs[g]->shape() == wx, gates[g], "input kernel " + xs[g]->shape().str() + ", expected " + wx.str());
    check_gate(hs[g]->shape() == wh, gates[g], "state kernel " + hs[g]->shape().str() + ", expected " + wh.str());
    check_gate(bs[g]->shape() == bias, gates[g], "bias " + bs[g]->shape().str() + ", expected " + bias.str());
    if (cs[g]) {
      check_gate(cs[g]->shape() == peep, gates[g], "peephole " + cs[g]->shape().str() + ", expected " + peep.str());
    }
  }
}

}  // namespace detail

// One ConvLSTM update:
//   i = sigmoid(W_xi*x + W_hi*h + W_ci.c + b_i)
//   f = sigmoid(W_xf*x + W_hf*h + W_cf.c + b_f)
//   c' = f.c + i.tanh(W_xc*x + W_hc*h + b_c)
//   o = sigmoid(W_xo*x + W_ho*h + W_co.c' + b_o)     (peephole on the new c')
//   h' = o.tanh(c')
template <typename T>
CellState<T> cell_step(const ConvLstmParams<T>& p, const Tensor<T>& x, const CellState<T>& prev) {
  detail::check_params(p);
  const Shape state = Shape::chw(p.hidden_channels(), p.height(), p.width());
  detail::check_gate(x.shape().rank() == 3 && x.channels() == p.in_channels(), "input",
                     "input " + x.shape().str() + " does not have " + std::to_string(p.in_channels()) + " channels");
  detail::check_gate(x.height() == p.height() && x.width() == p.width(), "input",
                     "input " + x.shape().str() + " spatial size differs from state " + state.str());
  detail::check_gate(prev.h.shape() == state, "state", "hidden " + prev.h.shape().str() + ", expected " + state.str());
  detail::check_gate(prev.c.shape() == state, "state", "cell " + prev.c.shape().str() + ", expected " + state.str());

  const std::size_t pad = p.kernel_size() / 2;
  auto pre = [&](const Tensor<T>& wx, const Tensor<T>& wh, const Tensor<T>& b) {
    return add(conv2d(x, wx, b, 1, pad), conv2d(prev.h, wh, 1, pad));
  };

  const Tensor<T> i = sigmoid_map(add(pre(p.w_xi, p.w_hi, p.b_i), hadamard(p.w_ci, prev.c)));
  const Tensor<T> f = sigmoid_map(add(pre(p.w_xf, p.w_hf, p.b_f), hadamard(p.w_cf, prev.c)));
  const Tensor<T> g = tanh_map(pre(p.w_xc, p.w_hc, p.b_c));
  const Tensor<T> c = add(hadamard(f, prev.c), hadamard(i, g));
  const Tensor<T> o = sigmoid_map(add(pre(p.w_xo, p.w_ho, p.b_o), hadamard(p.w_co, c)));
  return {hadamard(o, tanh_map(c)), c};
}

// Runs the chain over one cardiac cycle. Pass 1 starts from the zero
// state; every later pass starts from the final (H, C) of the previous pass
// without detaching, so gradients flow around the loop. Returns the hidden
// states of the final pass.
template <typename T>
std::vector<Tensor<T>> run_cycle(const ConvLstmParams<T>& p, const std::vector<Tensor<T>>& inputs,
                                 const CycleConfig& cfg, CellState<T>* final_state = nullptr) {
  cfg.validate();
  if (inputs.empty()) throw std::invalid_argument("run_cycle: empty input list");
  if (inputs.size() != cfg.frames) {
    throw std::invalid_argument("run_cycle: got " + std::to_string(inputs.size()) + " frames, cycle length is " +
                                std::to_string(cfg.frames));
  }
  for (const auto& x : inputs) {
    if (!(x.shape() == inputs.front().shape())) {
      throw std::invalid_argument("run_cycle: inputs differ in shape (" + x.shape().str() + " vs " +
                                  inputs.front().shape().str() + ")");
    }
  }
  CellState<T> state = CellState<T>::zeros(p.hidden_channels(), p.height(), p.width());
  std::vector<Tensor<T>> outputs(inputs.size());
  for (std::size_t pass = 0; pass < cfg.passes; ++pass) {
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      state = cell_step(p, inputs[t], state);
      if (pass + 1 == cfg.passes) outputs[t] = state.h;
    }
  }
  if (final_state) *final_state = state;
  return outputs;
}

}  // namespace cinelstm
