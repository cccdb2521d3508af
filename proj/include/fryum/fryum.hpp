#pragma once

#include "fryum/biphoton.hpp"
#include "fryum/common.hpp"
#include "fryum/keyrate.hpp"
#include "fryum/numeric.hpp"
#include "fryum/optimizer.hpp"
#include "fryum/parallel.hpp"
#include "fryum/raster.hpp"
#include "fryum/rng.hpp"
#include "fryum/segmentation.hpp"
#include "fryum/simulator.hpp"
#include "fryum/tilingbench.hpp"
