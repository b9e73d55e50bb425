#pragma once

#include "bgmm/akde.hpp"
#include "bgmm/balloon.hpp"
#include "bgmm/gauss2.hpp"
#include "bgmm/gem.hpp"
#include "bgmm/grid.hpp"
#include "bgmm/io.hpp"
#include "bgmm/parallel.hpp"
#include "bgmm/random.hpp"
#include "bgmm/svg.hpp"
