#include "cmsc/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace cmsc::ref {

Tensor conv2d_naive(const Tensor& input, const Conv2dParams& params) {
    const int n = input.n(), ic = input.c(), h = input.h(), w = input.w();
    const int oc = params.out_c(), k = params.k(), p = params.padding();
    if (ic != params.in_c()) throw std::invalid_argument("conv2d_naive: channel mismatch");
    Tensor out(n, oc, h, w);
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = params.bias[o];
                    for (int i = 0; i < ic; ++i)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y + ky - p;
                                const int ix = x + kx - p;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += params.weight.at(o, i, ky, kx) * input.at(b, i, iy, ix);
                            }
                    out.at(b, o, y, x) = acc;
                }
    return out;
}

ConvGrads conv2d_backward_naive(const Tensor& input, const Conv2dParams& params,
                                const Tensor& grad_out) {
    const int n = input.n(), ic = input.c(), h = input.h(), w = input.w();
    const int oc = params.out_c(), k = params.k(), p = params.padding();
    ConvGrads g;
    g.grad_input = Tensor(input.shape());
    g.grad_weight = Tensor(params.weight.shape());
    g.grad_bias.assign(oc, 0.0);
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double gv = grad_out.at(b, o, y, x);
                    g.grad_bias[o] += gv;
                    for (int i = 0; i < ic; ++i)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y + ky - p;
                                const int ix = x + kx - p;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                g.grad_weight.at(o, i, ky, kx) += gv * input.at(b, i, iy, ix);
                                g.grad_input.at(b, i, iy, ix) +=
                                    gv * params.weight.at(o, i, ky, kx);
                            }
                }
    return g;
}

Tensor batchnorm_apply_naive(const Tensor& input, const std::vector<double>& mean,
                             const std::vector<double>& var, const std::vector<double>& gamma,
                             const std::vector<double>& beta, double eps) {
    Tensor out(input.shape());
    for (int b = 0; b < input.n(); ++b)
        for (int c = 0; c < input.c(); ++c)
            for (int y = 0; y < input.h(); ++y)
                for (int x = 0; x < input.w(); ++x)
                    out.at(b, c, y, x) =
                        (input.at(b, c, y, x) - mean[c]) / std::sqrt(var[c] + eps) * gamma[c] +
                        beta[c];
    return out;
}

double ssim_naive(const std::vector<double>& a, const std::vector<double>& b, int width,
                  int height) {
    constexpr int win = 11;
    constexpr double sigma = 1.5;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    if (width < win || height < win)
        throw std::invalid_argument("ssim_naive: image smaller than the 11x11 window");

    double window[win][win];
    double wsum = 0.0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double dy = y - (win - 1) / 2.0;
            const double dx = x - (win - 1) / 2.0;
            window[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            wsum += window[y][x];
        }
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) window[y][x] /= wsum;

    double total = 0.0;
    std::size_t windows = 0;
    for (int oy = 0; oy + win <= height; ++oy)
        for (int ox = 0; ox + win <= width; ++ox) {
            double mu1 = 0.0, mu2 = 0.0, s11 = 0.0, s22 = 0.0, s12 = 0.0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double va = a[(oy + y) * static_cast<std::size_t>(width) + ox + x];
                    const double vb = b[(oy + y) * static_cast<std::size_t>(width) + ox + x];
                    const double wv = window[y][x];
                    mu1 += wv * va;
                    mu2 += wv * vb;
                    s11 += wv * va * va;
                    s22 += wv * vb * vb;
                    s12 += wv * va * vb;
                }
            const double var1 = s11 - mu1 * mu1;
            const double var2 = s22 - mu2 * mu2;
            const double cov = s12 - mu1 * mu2;
            total += ((2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)) /
                     ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2));
            ++windows;
        }
    return total / static_cast<double>(windows);
}

}  // namespace cmsc::ref
