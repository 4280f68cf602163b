#include "nearmiss/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nearmiss {

namespace {

int read_pnm_token(std::istream& in) {
    // skips whitespace and '#' comments
    for (;;) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    if (!in) throw std::runtime_error("pnm: malformed header");
    return v;
}

}  // namespace

Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pnm: cannot open " + path);
    char p = 0, kind = 0;
    in.get(p).get(kind);
    if (p != 'P' || (kind != '5' && kind != '6'))
        throw std::runtime_error("pnm: " + path + " is not binary PGM/PPM");
    int w = read_pnm_token(in);
    int h = read_pnm_token(in);
    int maxval = read_pnm_token(in);
    in.get();  // single whitespace after maxval
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw std::runtime_error("pnm: bad dimensions in " + path);
    int c = (kind == '6') ? 3 : 1;
    if (kind == '6' && maxval > 255) throw std::runtime_error("pnm: 16-bit PPM unsupported");
    Image img(h, w, c);
    std::size_t n = std::size_t(h) * w * c;
    if (maxval > 255) {
        std::vector<std::uint8_t> raw(n * 2);
        in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        if (!in) throw std::runtime_error("pnm: truncated pixel data in " + path);
        for (std::size_t i = 0; i < n; ++i) {
            unsigned v = (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];  // big-endian
            img.px[i] = double(v) / double(maxval);
        }
    } else {
        std::vector<std::uint8_t> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        if (!in) throw std::runtime_error("pnm: truncated pixel data in " + path);
        for (std::size_t i = 0; i < n; ++i) img.px[i] = double(raw[i]) / double(maxval);
    }
    return img;
}

static void write_pnm(const std::string& path, const Image& img, int channels, char kind) {
    if (img.c != channels)
        throw std::invalid_argument("pnm: expected " + std::to_string(channels) +
                                    " channels, got " + std::to_string(img.c));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("pnm: cannot write " + path);
    out << 'P' << kind << '\n' << img.w << ' ' << img.h << "\n255\n";
    std::vector<std::uint8_t> raw(img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        double v = std::clamp(img.px[i], 0.0, 1.0);
        raw[i] = std::uint8_t(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!out) throw std::runtime_error("pnm: write failed for " + path);
}

void write_pgm(const std::string& path, const Image& img) { write_pnm(path, img, 1, '5'); }
void write_ppm(const std::string& path, const Image& img) { write_pnm(path, img, 3, '6'); }

Image read_text_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("grid: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (!ls.eof() && ls.fail())
            throw std::runtime_error("grid: non-numeric cell in " + path);
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("grid: no rows in " + path);
    std::size_t w = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != w) throw std::runtime_error("grid: ragged rows in " + path);
    Image img(int(rows.size()), int(w), 1);
    for (std::size_t y = 0; y < rows.size(); ++y)
        for (std::size_t x = 0; x < w; ++x) img.px[y * w + x] = rows[y][x];
    return img;
}

namespace {

// Sample positions follow the half-pixel convention: output pixel centers map
// to (i + 0.5) * scale - 0.5 in input coordinates, clamped at the border.
inline void bilinear_coeffs(int out, int in, int i, int& lo, int& hi, double& frac) {
    double pos = (double(i) + 0.5) * double(in) / double(out) - 0.5;
    if (pos < 0) pos = 0;
    if (pos > in - 1) pos = in - 1;
    lo = int(std::floor(pos));
    hi = std::min(lo + 1, in - 1);
    frac = pos - lo;
}

}  // namespace

Image bilinear_resize(const Image& img, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize: non-positive output size");
    if (oh == img.h && ow == img.w) return img;
    Image out(oh, ow, img.c);
    for (int y = 0; y < oh; ++y) {
        int y0, y1;
        double fy;
        bilinear_coeffs(oh, img.h, y, y0, y1, fy);
        for (int x = 0; x < ow; ++x) {
            int x0, x1;
            double fx;
            bilinear_coeffs(ow, img.w, x, x0, x1, fx);
            for (int ch = 0; ch < img.c; ++ch) {
                double v00 = img.at(y0, x0, ch), v01 = img.at(y0, x1, ch);
                double v10 = img.at(y1, x0, ch), v11 = img.at(y1, x1, ch);
                double top = v00 + (v01 - v00) * fx;
                double bot = v10 + (v11 - v10) * fx;
                out.at(y, x, ch) = top + (bot - top) * fy;
            }
        }
    }
    return out;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.h || x0 + w > img.w)
        throw std::invalid_argument("crop: window outside image");
    Image out(h, w, img.c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y0 + y, x0 + x, ch);
    return out;
}

Tensor bilinear_resize_map(const Tensor& map, int oh, int ow) {
    if (map.rank() != 2) throw std::invalid_argument("resize_map: expected rank-2 tensor");
    Image img(map.size(0), map.size(1), 1);
    img.px = map.data;
    Image r = bilinear_resize(img, oh, ow);
    Tensor out({oh, ow});
    out.data = r.px;
    return out;
}

}  // namespace nearmiss
