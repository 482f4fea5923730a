#pragma once

// Reverse-mode differentiable arrays and the primitives the model is built from.

#include "mrnn/diffcore/array.hpp"
#include "mrnn/diffcore/gradcheck.hpp"
#include "mrnn/diffcore/ops.hpp"
#include "mrnn/diffcore/tape.hpp"
#include "mrnn/error.hpp"
