#pragma once

#include "polysketch/dataset.hpp"
#include "polysketch/errors.hpp"
#include "polysketch/experiment.hpp"
#include "polysketch/fwht.hpp"
#include "polysketch/gp.hpp"
#include "polysketch/maclaurin.hpp"
#include "polysketch/rng.hpp"
#include "polysketch/sketches.hpp"
#include "polysketch/tensor_srht.hpp"
#include "polysketch/variance.hpp"
