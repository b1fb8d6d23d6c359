#pragma once

#include "thinner/data.hpp"
#include "thinner/error.hpp"
#include "thinner/network.hpp"
#include "thinner/pruning.hpp"
#include "thinner/random.hpp"
#include "thinner/scoring.hpp"
#include "thinner/tensor.hpp"
