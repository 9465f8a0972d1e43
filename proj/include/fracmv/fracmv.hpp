#pragma once

#include "fracmv/core.hpp"
#include "fracmv/rng.hpp"
#include "fracmv/fbm_kernel.hpp"
#include "fracmv/rkhs.hpp"
#include "fracmv/measure.hpp"
#include "fracmv/model.hpp"
#include "fracmv/mckean.hpp"
#include "fracmv/asymptotics.hpp"
#include "fracmv/mc_lab.hpp"
#include "fracmv/io.hpp"
#include "fracmv/config.hpp"
#include "fracmv/runner.hpp"
