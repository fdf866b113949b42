#pragma once

#include <string>
#include <vector>

#include "bsem/engine.hpp"

namespace bsem {

// posterior summary block in the usual sectioned layout
std::string render_summary(const FitResult& result);

std::string render_fitmeasures(const FitMeasures& fit);

// one panel per requested parameter (all free parameters when empty);
// kind is "trace" or "autocorr"
std::string render_plot_svg(const FitResult& result, const std::vector<std::string>& params,
                            const std::string& kind);

}  // namespace bsem
