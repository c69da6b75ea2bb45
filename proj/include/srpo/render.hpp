#pragma once
// Optional PNG heatmap rendering of density grids. CSV is the contract;
// these images are a convenience and require libpng at build time.

#include <filesystem>

#include "srpo/behavior.hpp"

namespace srpo {

bool png_support_available();

// Renders exp(values) with a perceptual-ish colormap, one pixel per cell.
// Throws DependencyError when PNG support was not compiled in.
void write_density_png(const DensityGrid& grid,
                       const std::filesystem::path& path);

}  // namespace srpo
