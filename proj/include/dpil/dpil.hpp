#pragma once

// Umbrella header for the whole library.

#include "dpil/demos.hpp"
#include "dpil/diffusion.hpp"
#include "dpil/envs.hpp"
#include "dpil/error.hpp"
#include "dpil/eval.hpp"
#include "dpil/harness.hpp"
#include "dpil/imitation.hpp"
#include "dpil/io.hpp"
#include "dpil/nn.hpp"
#include "dpil/parallel.hpp"
#include "dpil/random.hpp"
