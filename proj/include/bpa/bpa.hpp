#pragma once

#include "bpa/classical.hpp"
#include "bpa/config.hpp"
#include "bpa/density.hpp"
#include "bpa/errors.hpp"
#include "bpa/geometry.hpp"
#include "bpa/inference.hpp"
#include "bpa/io.hpp"
#include "bpa/posterior.hpp"
#include "bpa/random.hpp"
#include "bpa/sampler.hpp"
#include "bpa/simulate.hpp"
