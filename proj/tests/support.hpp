#pragma once

// Reference implementations used as test oracles. They are deliberately
// naive: plain loops over every index, no shared code with the library
// kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cinelstm/convlstm.hpp"
#include "cinelstm/image.hpp"
#include "cinelstm/metrics.hpp"
#include "cinelstm/tensor.hpp"

namespace oracle {

using cinelstm::Shape;
using cinelstm::Tensor;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = u(rng);
  return Tensor<double>(shape, std::move(v));
}

// Values in [-hi, -lo] u [lo, hi], keeping finite differences off the ReLU kink.
inline Tensor<double> random_away_from_zero(Shape shape, std::mt19937_64& rng, double lo = 0.05, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor<double>(shape, std::move(v));
}

// Output-major loop; per output the sum starts at the bias and adds
// input channel, kernel row, kernel column in that order.
template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, std::size_t c_in, std::size_t h, std::size_t w, const std::vector<T>& k,
                      std::size_t c_out, std::size_t kh, std::size_t kw, const std::vector<T>* bias, std::size_t stride,
                      std::size_t pad, std::size_t* out_h, std::size_t* out_w) {
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<T> out(c_out * oh * ow);
  for (std::size_t co = 0; co < c_out; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = bias ? (*bias)[co] : T(0);
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              T v = T(0);
              if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w)) {
                v = x[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
              }
              acc += v * k[((co * c_in + ci) * kh + ky) * kw + kx];
            }
          }
        }
        out[(co * oh + oy) * ow + ox] = acc;
      }
    }
  }
  *out_h = oh;
  *out_w = ow;
  return out;
}

// Scatter form of the transposed convolution; kernel is [in, out, kh, kw].
inline std::vector<double> conv_transpose2d(const std::vector<double>& x, std::size_t c_in, std::size_t h,
                                            std::size_t w, const std::vector<double>& k, std::size_t c_out,
                                            std::size_t kh, std::size_t kw, const std::vector<double>* bias,
                                            std::size_t stride, std::size_t pad, std::size_t out_pad,
                                            std::size_t* out_h, std::size_t* out_w) {
  const std::size_t oh = (h - 1) * stride + kh + out_pad - 2 * pad;
  const std::size_t ow = (w - 1) * stride + kw + out_pad - 2 * pad;
  std::vector<double> out(c_out * oh * ow, 0.0);
  for (std::size_t co = 0; co < c_out; ++co) {
    for (std::size_t i = 0; i < oh * ow; ++i) out[co * oh * ow + i] = bias ? (*bias)[co] : 0.0;
  }
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    for (std::size_t iy = 0; iy < h; ++iy) {
      for (std::size_t ix = 0; ix < w; ++ix) {
        const double v = x[(ci * h + iy) * w + ix];
        for (std::size_t co = 0; co < c_out; ++co) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long oy = static_cast<long>(iy * stride + ky) - static_cast<long>(pad);
              const long ox = static_cast<long>(ix * stride + kx) - static_cast<long>(pad);
              if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) continue;
              out[(co * oh + static_cast<std::size_t>(oy)) * ow + static_cast<std::size_t>(ox)] +=
                  v * k[((ci * c_out + co) * kh + ky) * kw + kx];
            }
          }
        }
      }
    }
  }
  *out_h = oh;
  *out_w = ow;
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// One ConvLSTM step evaluated pixel by pixel from the gate equations.
struct ScalarCellResult {
  std::vector<double> h, c;
};

inline ScalarCellResult convlstm_step(const cinelstm::ConvLstmParams<double>& p, const std::vector<double>& x,
                                      const std::vector<double>& h_prev, const std::vector<double>& c_prev) {
  const std::size_t ci_n = p.in_channels(), hc = p.hidden_channels(), k = p.kernel_size();
  const std::size_t H = p.height(), W = p.width(), pad = k / 2;
  auto conv_at = [&](const Tensor<double>& kern, const std::vector<double>& src, std::size_t channels, std::size_t co,
                     std::size_t y, std::size_t xx) {
    double acc = 0.0;
    for (std::size_t ci = 0; ci < channels; ++ci) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
          const long ix = static_cast<long>(xx + kx) - static_cast<long>(pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
          acc += src[(ci * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] *
                 kern.data()[((co * channels + ci) * k + ky) * k + kx];
        }
      }
    }
    return acc;
  };
  ScalarCellResult r{std::vector<double>(hc * H * W), std::vector<double>(hc * H * W)};
  for (std::size_t co = 0; co < hc; ++co) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        const std::size_t idx = (co * H + y) * W + xx;
        const double cp = c_prev[idx];
        const double i = sigmoid(conv_at(p.w_xi, x, ci_n, co, y, xx) + conv_at(p.w_hi, h_prev, hc, co, y, xx) +
                                 p.w_ci.data()[idx] * cp + p.b_i.data()[co]);
        const double f = sigmoid(conv_at(p.w_xf, x, ci_n, co, y, xx) + conv_at(p.w_hf, h_prev, hc, co, y, xx) +
                                 p.w_cf.data()[idx] * cp + p.b_f.data()[co]);
        const double g = std::tanh(conv_at(p.w_xc, x, ci_n, co, y, xx) + conv_at(p.w_hc, h_prev, hc, co, y, xx) +
                                   p.b_c.data()[co]);
        const double c = f * cp + i * g;
        const double o = sigmoid(conv_at(p.w_xo, x, ci_n, co, y, xx) + conv_at(p.w_ho, h_prev, hc, co, y, xx) +
                                 p.w_co.data()[idx] * c + p.b_o.data()[co]);
        r.c[idx] = c;
        r.h[idx] = o * std::tanh(c);
      }
    }
  }
  return r;
}

inline cinelstm::ConvLstmParams<double> random_convlstm(std::size_t in_ch, std::size_t hidden, std::size_t k,
                                                        std::size_t H, std::size_t W, std::mt19937_64& rng,
                                                        double scale = 0.5) {
  auto p = cinelstm::zero_convlstm<double>(in_ch, hidden, H, W, k);
  p.visit([&](const char*, Tensor<double>& t) { t = random_tensor(t.shape(), rng, -scale, scale); });
  return p;
}

// Largest relative error between tape gradients and central differences of
// f over every element of every input. Relative error per element is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline GradCheck check_gradients(const std::vector<Tensor<double>>& inputs,
                                 const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                 double step = 1e-5, double floor = 1e-6) {
  cinelstm::Tape<double> tape;
  std::vector<Tensor<double>> watched;
  for (const auto& t : inputs) watched.push_back(tape.watch(t));
  const Tensor<double> loss = f(watched);
  const cinelstm::Gradients<double> grads = tape.backward(loss);

  GradCheck out;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor<double> analytic = grads.of(watched[a]);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      std::vector<Tensor<double>> plus = inputs, minus = inputs;
      plus[a].mutable_data()[i] += step;
      minus[a].mutable_data()[i] -= step;
      const double numeric = (f(plus)[0] - f(minus)[0]) / (2.0 * step);
      const double an = analytic[i];
      const double denom = std::max({std::abs(an), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(an - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

// Same check for an objective sum_k <outputs_k, weights_k>, but the central
// difference is taken per output element before contracting. Subtracting
// two large accumulated sums loses digits that deep networks need.
inline GradCheck check_gradients_contracted(
    const std::vector<Tensor<double>>& inputs,
    const std::function<std::vector<Tensor<double>>(const std::vector<Tensor<double>>&)>& f,
    const std::vector<Tensor<double>>& weights, double step = 1e-5, double floor = 1e-6) {
  cinelstm::Tape<double> tape;
  std::vector<Tensor<double>> watched;
  for (const auto& t : inputs) watched.push_back(tape.watch(t));
  const auto outs = f(watched);
  Tensor<double> loss(Shape::scalar(), 0.0);
  for (std::size_t k = 0; k < outs.size(); ++k) {
    loss = cinelstm::add(loss, cinelstm::sum(cinelstm::hadamard(outs[k], weights[k])));
  }
  const cinelstm::Gradients<double> grads = tape.backward(loss);

  GradCheck out;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor<double> analytic = grads.of(watched[a]);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      std::vector<Tensor<double>> plus = inputs, minus = inputs;
      plus[a].mutable_data()[i] += step;
      minus[a].mutable_data()[i] -= step;
      const auto yp = f(plus), ym = f(minus);
      double numeric = 0.0;
      for (std::size_t k = 0; k < yp.size(); ++k) {
        for (std::size_t j = 0; j < yp[k].size(); ++j) numeric += weights[k][j] * (yp[k][j] - ym[k][j]);
      }
      numeric /= 2.0 * step;
      const double an = analytic[i];
      const double denom = std::max({std::abs(an), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(an - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

// Scalar objective: sum(out .* weights), so every output element matters.
inline Tensor<double> weighted_sum(const Tensor<double>& out, const Tensor<double>& weights) {
  return cinelstm::sum(cinelstm::hadamard(out, weights));
}


// Metric oracles: direct translations of the definitions, O(n^2) scans.

inline double dice(const cinelstm::Mask& a, const cinelstm::Mask& b) {
  double na = 0, nb = 0, both = 0;
  for (std::size_t r = 0; r < a.height; ++r) {
    for (std::size_t c = 0; c < a.width; ++c) {
      na += a.at(r, c);
      nb += b.at(r, c);
      both += a.at(r, c) && b.at(r, c);
    }
  }
  return na + nb == 0 ? 1.0 : 2.0 * both / (na + nb);
}

inline bool is_boundary(const cinelstm::Mask& m, int r, int c) {
  const int h = static_cast<int>(m.height), w = static_cast<int>(m.width);
  if (!m.at(r, c)) return false;
  if (r == 0 || c == 0 || r == h - 1 || c == w - 1) return true;
  return !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1);
}

inline cinelstm::Contour contour(const cinelstm::Mask& m) {
  cinelstm::Contour out;
  for (int r = 0; r < static_cast<int>(m.height); ++r) {
    for (int c = 0; c < static_cast<int>(m.width); ++c) {
      if (is_boundary(m, r, c)) out.push_back({r, c});
    }
  }
  return out;
}

inline double distance(cinelstm::Pixel p, cinelstm::Pixel q, double spacing) {
  const double dr = (p.row - q.row) * spacing, dc = (p.col - q.col) * spacing;
  return std::sqrt(dr * dr + dc * dc);
}

inline double directed_max(const cinelstm::Contour& a, const cinelstm::Contour& b, double spacing) {
  double worst = 0.0;
  for (const auto& p : a) {
    double best = INFINITY;
    for (const auto& q : b) best = std::min(best, distance(p, q, spacing));
    worst = std::max(worst, best);
  }
  return worst;
}

inline double hausdorff(const cinelstm::Contour& a, const cinelstm::Contour& b, double spacing) {
  return std::max(directed_max(a, b, spacing), directed_max(b, a, spacing));
}

inline double apd(const cinelstm::Contour& automatic, const cinelstm::Contour& manual, double spacing) {
  double total = 0.0;
  for (const auto& p : automatic) {
    double best = INFINITY;
    for (const auto& q : manual) best = std::min(best, distance(p, q, spacing));
    total += best;
  }
  return total / static_cast<double>(automatic.size());
}

// Random mask: a few filled discs plus salt noise, so contours range from
// smooth arcs to isolated pixels.
inline cinelstm::Mask random_mask(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  cinelstm::Mask m(h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int discs = 1 + static_cast<int>(rng() % 3);
  for (int d = 0; d < discs; ++d) {
    const double cr = u(rng) * h, cc = u(rng) * w, rad = 2.0 + u(rng) * h / 3.0;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= rad * rad) m.at(r, c) = 1;
      }
    }
  }
  const double salt = u(rng) * 0.1;
  for (auto& b : m.bits) {
    if (u(rng) < salt) b ^= 1;
  }
  return m;
}

// Filled disk of intensity 1 on a zero background plus Gaussian noise; the
// shape a motion map takes around a beating ventricle.
inline cinelstm::Image circle_map(std::size_t size, double row, double col, double radius, double noise_sigma,
                                  std::mt19937_64& rng) {
  cinelstm::Image img(size, size);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double d = std::hypot(static_cast<double>(r) - row, static_cast<double>(c) - col);
      double v = d <= radius ? 1.0 : 0.0;
      if (noise_sigma > 0.0) v += noise(rng);
      img.at(r, c) = static_cast<float>(v);
    }
  }
  return img;
}

struct CircleTruth {
  double row, col, radius;
};

// Random circle fully inside a size x size image.
inline CircleTruth random_circle(std::size_t size, std::size_t r_min, std::size_t r_max, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> rad(r_min, r_max);
  const double r = static_cast<double>(rad(rng));
  std::uniform_real_distribution<double> pos(r + 2.0, static_cast<double>(size) - r - 3.0);
  return {pos(rng), pos(rng), r};
}

}  // namespace oracle
