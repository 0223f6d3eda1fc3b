#include <algorithm>
#include <string>

#include "gemm.hpp"
#include "sembg/errors.hpp"
#include "sembg/ops.hpp"

namespace sembg {

namespace {

// Weight-gradient partial sums are accumulated per fixed batch chunk and then
// merged in chunk order, so the result does not depend on the thread count.
constexpr std::size_t kReductionChunks = 8;
// Upper bound, in floats, on one lowered column buffer.
constexpr std::size_t kColumnBudget = std::size_t{1} << 16;

struct Geometry {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t out_c, out_h, out_w;
  std::size_t k, groups, in_cg, out_cg;
  int stride, pad;

  std::size_t col_rows() const { return in_cg * k * k; }
  std::size_t col_cols() const { return out_h * out_w; }
  // Samples lowered together so one GEMM covers several images.
  std::size_t block() const {
    const std::size_t per_sample = std::max<std::size_t>(1, col_rows() * col_cols());
    return std::clamp<std::size_t>(kColumnBudget / per_sample, 1, 64);
  }
};

Geometry make_geometry(const Tensor& x, const ConvParams& p) {
  p.validate();
  require_rank(x, 4, "conv2d input");
  Geometry g{};
  g.batch = x.dim(0);
  g.in_c = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  if (g.in_c % static_cast<std::size_t>(p.groups) != 0) {
    throw ShapeError("conv2d: c_in=" + std::to_string(g.in_c) + " not divisible by groups=" +
                     std::to_string(p.groups));
  }
  if (g.in_c != p.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(g.in_c) + " channels, weight expects " +
                     std::to_string(p.in_channels()));
  }
  g.k = p.kernel();
  g.groups = static_cast<std::size_t>(p.groups);
  g.stride = p.stride;
  g.pad = p.padding;
  g.out_c = p.out_channels();
  g.out_h = conv_output_extent(g.in_h, g.k, p.stride, p.padding);
  g.out_w = conv_output_extent(g.in_w, g.k, p.stride, p.padding);
  g.in_cg = g.in_c / g.groups;
  g.out_cg = g.out_c / g.groups;
  return g;
}

// Output columns [lo, hi) whose input column ox * stride + kx - pad is inside
// the image.
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t kx, int stride,
                                                int pad) {
  const long off = static_cast<long>(kx) - pad;
  long lo = 0;
  while (lo < static_cast<long>(out) && lo * stride + off < 0) ++lo;
  long hi = static_cast<long>(out);
  while (hi > lo && (hi - 1) * stride + off >= static_cast<long>(in)) --hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Gathers the receptive fields of one channel group of one sample into the
// columns of col[in_cg * k * k, ld] starting at `col`.
void im2col(const float* img, const Geometry& g, float* col, std::size_t ld) {
  const auto s = static_cast<std::size_t>(g.stride);
  for (std::size_t kx = 0; kx < g.k; ++kx) {
    const auto [lo, hi] = valid_range(g.out_w, g.in_w, kx, g.stride, g.pad);
    const long off = static_cast<long>(kx) - g.pad;
    for (std::size_t c = 0; c < g.in_cg; ++c) {
      const float* plane = img + c * g.in_h * g.in_w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        float* row = col + ((c * g.k + ky) * g.k + kx) * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          float* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h) || lo >= hi) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.in_w + (static_cast<long>(lo * s) + off);
          std::fill(dst, dst + lo, 0.0f);
          if (s == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * s];
          }
          std::fill(dst + hi, dst + g.out_w, 0.0f);
        }
      }
    }
  }
}

// Scatter-adds col back into one channel group of one sample.
void col2im(const float* col, const Geometry& g, float* img, std::size_t ld) {
  const auto s = static_cast<std::size_t>(g.stride);
  for (std::size_t kx = 0; kx < g.k; ++kx) {
    const auto [lo, hi] = valid_range(g.out_w, g.in_w, kx, g.stride, g.pad);
    if (lo >= hi) continue;
    const long off = static_cast<long>(kx) - g.pad;
    for (std::size_t c = 0; c < g.in_cg; ++c) {
      float* plane = img + c * g.in_h * g.in_w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const float* row = col + ((c * g.k + ky) * g.k + kx) * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          float* __restrict dst = plane + static_cast<std::size_t>(iy) * g.in_w + (static_cast<long>(lo * s) + off);
          const float* __restrict src = row + oy * g.out_w + lo;
          for (std::size_t j = 0; j < hi - lo; ++j) dst[j * s] += src[j];
        }
      }
    }
  }
}

}  // namespace

std::size_t ConvParams::param_count() const {
  return weight.numel() + (bias ? bias->numel() : 0);
}

void ConvParams::validate() const {
  require_rank(weight, 4, "conv weight");
  if (groups < 1 || stride < 1 || padding < 0) {
    throw ShapeError("conv2d: groups and stride must be positive, padding non-negative");
  }
  if (weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d: kernel must be square");
  if (out_channels() % static_cast<std::size_t>(groups) != 0) {
    throw ShapeError("conv2d: c_out=" + std::to_string(out_channels()) +
                     " not divisible by groups=" + std::to_string(groups));
  }
  if (bias) require_shape(*bias, {out_channels()}, "conv bias");
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, int stride, int padding) {
  const long span = static_cast<long>(in) + 2L * padding - static_cast<long>(kernel);
  if (span < 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in));
  }
  return static_cast<std::size_t>(span / stride) + 1;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const Geometry g = make_geometry(x, p);
  Tensor y({g.batch, g.out_c, g.out_h, g.out_w});
  const std::size_t rows = g.col_rows();
  const std::size_t cols = g.col_cols();
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t block = g.block();
  const std::size_t n_blocks = (g.batch + block - 1) / block;

#pragma omp parallel
  {
    std::vector<float> col(rows * cols * block);
    std::vector<float> out(g.out_cg * cols * block);
#pragma omp for schedule(static)
    for (std::size_t bi = 0; bi < n_blocks; ++bi) {
      const std::size_t begin = bi * block;
      const std::size_t ns = std::min(g.batch, begin + block) - begin;
      const std::size_t ld = ns * cols;
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        for (std::size_t i = 0; i < ns; ++i) {
          im2col(x.ptr() + ((begin + i) * g.in_c + grp * g.in_cg) * in_plane, g, col.data() + i * cols, ld);
        }
        for (std::size_t oc = 0; oc < g.out_cg; ++oc) {
          const float b = p.bias ? (*p.bias)[grp * g.out_cg + oc] : 0.0f;
          std::fill(out.begin() + static_cast<std::ptrdiff_t>(oc * ld),
                    out.begin() + static_cast<std::ptrdiff_t>((oc + 1) * ld), b);
        }
        const float* w = p.weight.ptr() + grp * g.out_cg * rows;
        detail::gemm_nn(g.out_cg, ld, rows, w, rows, col.data(), ld, out.data(), ld);
        for (std::size_t i = 0; i < ns; ++i) {
          float* dst = y.ptr() + ((begin + i) * g.out_c + grp * g.out_cg) * cols;
          for (std::size_t oc = 0; oc < g.out_cg; ++oc) {
            std::copy_n(out.data() + oc * ld + i * cols, cols, dst + oc * cols);
          }
        }
      }
    }
  }
  y.ensure_finite("conv2d output");
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy) {
  const Geometry g = make_geometry(x, p);
  require_shape(dy, {g.batch, g.out_c, g.out_h, g.out_w}, "conv2d_backward dy");
  const std::size_t rows = g.col_rows();
  const std::size_t cols = g.col_cols();
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t wsize = p.weight.numel();
  const std::size_t block = g.block();

  ConvGrads grads{Tensor(x.shape()), Tensor(p.weight.shape()), std::nullopt};
  std::vector<std::vector<float>> partial(kReductionChunks);

#pragma omp parallel
  {
    std::vector<float> col(rows * cols * block);
    std::vector<float> dcol(rows * cols * block);
    std::vector<float> dout(g.out_cg * cols * block);
#pragma omp for schedule(static)
    for (std::size_t chunk = 0; chunk < kReductionChunks; ++chunk) {
      const std::size_t chunk_begin = g.batch * chunk / kReductionChunks;
      const std::size_t chunk_end = g.batch * (chunk + 1) / kReductionChunks;
      if (chunk_begin == chunk_end) continue;
      std::vector<float>& dw = partial[chunk];
      dw.assign(wsize, 0.0f);
      for (std::size_t begin = chunk_begin; begin < chunk_end; begin += block) {
        const std::size_t ns = std::min(chunk_end, begin + block) - begin;
        const std::size_t ld = ns * cols;
        for (std::size_t grp = 0; grp < g.groups; ++grp) {
          for (std::size_t i = 0; i < ns; ++i) {
            im2col(x.ptr() + ((begin + i) * g.in_c + grp * g.in_cg) * in_plane, g, col.data() + i * cols, ld);
            const float* src = dy.ptr() + ((begin + i) * g.out_c + grp * g.out_cg) * cols;
            for (std::size_t oc = 0; oc < g.out_cg; ++oc) {
              std::copy_n(src + oc * cols, cols, dout.data() + oc * ld + i * cols);
            }
          }
          const float* w = p.weight.ptr() + grp * g.out_cg * rows;
          detail::gemm_nt(g.out_cg, rows, ld, dout.data(), ld, col.data(), ld, dw.data() + grp * g.out_cg * rows,
                          rows);
          std::fill(dcol.begin(), dcol.begin() + static_cast<std::ptrdiff_t>(rows * ld), 0.0f);
          detail::gemm_tn(rows, ld, g.out_cg, w, rows, dout.data(), ld, dcol.data(), ld);
          for (std::size_t i = 0; i < ns; ++i) {
            col2im(dcol.data() + i * cols, g, grads.dx.ptr() + ((begin + i) * g.in_c + grp * g.in_cg) * in_plane,
                   ld);
          }
        }
      }
    }
  }

  float* dw = grads.dweight.ptr();
  for (const auto& part : partial) {
    if (part.empty()) continue;
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += part[i];
  }

  if (p.bias) {
    Tensor db({g.out_c});
    for (std::size_t c = 0; c < g.out_c; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        const float* d = dy.ptr() + (n * g.out_c + c) * cols;
        for (std::size_t i = 0; i < cols; ++i) s += d[i];
      }
      db[c] = static_cast<float>(s);
    }
    grads.dbias = std::move(db);
  }
  return grads;
}

}  // namespace sembg
