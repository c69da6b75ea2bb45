#include "srpo/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "srpo/errors.hpp"

#if defined(SRPO_HAVE_PNG)
#include <png.h>
#endif

namespace srpo {

bool png_support_available() {
#if defined(SRPO_HAVE_PNG)
  return true;
#else
  return false;
#endif
}

#if defined(SRPO_HAVE_PNG)

namespace {

// Compact viridis-like ramp.
void colormap(double v, unsigned char* rgb) {
  static constexpr double stops[5][3] = {{0.267, 0.005, 0.329},
                                         {0.229, 0.322, 0.546},
                                         {0.128, 0.567, 0.551},
                                         {0.369, 0.789, 0.383},
                                         {0.993, 0.906, 0.144}};
  v = std::clamp(v, 0.0, 1.0) * 4.0;
  const int lo = std::min(3, static_cast<int>(v));
  const double f = v - lo;
  for (int c = 0; c < 3; ++c) {
    const double x = stops[lo][c] + f * (stops[lo + 1][c] - stops[lo][c]);
    rgb[c] = static_cast<unsigned char>(std::lround(255.0 * x));
  }
}

}  // namespace

void write_density_png(const DensityGrid& grid,
                       const std::filesystem::path& path) {
  if (grid.nx == 0 || grid.ny == 0) {
    throw ConfigError("cannot render an empty density grid");
  }
  double lo = grid.values[0];
  double hi = grid.values[0];
  for (const double v : grid.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double dlo = std::exp(lo);
  const double dhi = std::exp(hi);
  const double span = dhi - dlo > 0.0 ? dhi - dlo : 1.0;

  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) {
    throw DependencyError("cannot open png for writing: " + path.string());
  }
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    std::fclose(fp);
    png_destroy_write_struct(&png, &info);
    throw DependencyError("libpng failure while writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(grid.nx),
               static_cast<png_uint_32>(grid.ny), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(grid.nx * 3);
  // Image rows run top-to-bottom; grid rows bottom-to-top.
  for (std::size_t iy = grid.ny; iy-- > 0;) {
    for (std::size_t ix = 0; ix < grid.nx; ++ix) {
      const double d = std::exp(grid.values[iy * grid.nx + ix]);
      colormap((d - dlo) / span, row.data() + 3 * ix);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

#else

void write_density_png(const DensityGrid&, const std::filesystem::path&) {
  throw DependencyError("png rendering was not compiled in");
}

#endif

}  // namespace srpo
