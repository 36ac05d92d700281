#pragma once

#include <map>
#include <string>

#include "soma/harness/pipeline.hpp"

namespace soma {

/// SVG panels keyed by file name (occupancy, readiness, calibration, displacement, recovery,
/// spectrum, correlation). Every file opens with a comment carrying the config hash.
std::map<std::string, std::string> render_figures(const AssayBundle& bundle);

}  // namespace soma
