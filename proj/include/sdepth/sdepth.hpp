#pragma once

// Umbrella header for the stereo depth estimation library.

#include "config.hpp"    // IWYU pragma: export
#include "data.hpp"      // IWYU pragma: export
#include "errors.hpp"    // IWYU pragma: export
#include "geometry.hpp"  // IWYU pragma: export
#include "gradcheck.hpp" // IWYU pragma: export
#include "gradsuite.hpp" // IWYU pragma: export
#include "loss.hpp"      // IWYU pragma: export
#include "metrics.hpp"   // IWYU pragma: export
#include "model.hpp"     // IWYU pragma: export
#include "ops.hpp"       // IWYU pragma: export
#include "rng.hpp"       // IWYU pragma: export
#include "tensor.hpp"    // IWYU pragma: export
#include "train.hpp"     // IWYU pragma: export
