#ifndef NEARMISS_IMAGE_HPP
#define NEARMISS_IMAGE_HPP

#include <string>
#include <vector>

#include "nearmiss/tensor.hpp"

namespace nearmiss {

// Planar-free image: row-major (H, W, C), values in [0, 1] unless stated.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> px;

    Image() = default;
    Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), px(std::size_t(h_) * w_ * c_, 0.0) {}

    double& at(int y, int x, int ch) { return px[(std::size_t(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return px[(std::size_t(y) * w + x) * c + ch]; }
};

// Binary PGM (P5, 1 channel, 8 or 16 bit) and PPM (P6, 3 channel, 8 bit).
Image read_pnm(const std::string& path);
void write_pgm(const std::string& path, const Image& img);   // c == 1, 8-bit
void write_ppm(const std::string& path, const Image& img);   // c == 3, 8-bit

// Whitespace-separated numeric grid, one row per line.
Image read_text_grid(const std::string& path);

Image bilinear_resize(const Image& img, int oh, int ow);
Image crop(const Image& img, int y0, int x0, int h, int w);

// Bilinear upsample of a 2D map stored as a Tensor(h, w).
Tensor bilinear_resize_map(const Tensor& map, int oh, int ow);

}  // namespace nearmiss

#endif
