#ifndef PRNU_PRNU_HPP
#define PRNU_PRNU_HPP

#include "prnu/core.hpp"
#include "prnu/raster_io.hpp"
#include "prnu/pixelplane.hpp"
#include "prnu/fingerprint.hpp"
#include "prnu/stats.hpp"
#include "prnu/sampling.hpp"
#include "prnu/training.hpp"
#include "prnu/sprt.hpp"
#include "prnu/synthcam.hpp"
#include "prnu/pipeline.hpp"

#endif  // PRNU_PRNU_HPP
