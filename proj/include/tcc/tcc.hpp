#pragma once

#include "tcc/error.hpp"
#include "tcc/array.hpp"
#include "tcc/rng.hpp"
#include "tcc/autodiff.hpp"
#include "tcc/encoder.hpp"
#include "tcc/queue.hpp"
#include "tcc/cluster.hpp"
#include "tcc/instance.hpp"
#include "tcc/metrics.hpp"
#include "tcc/data.hpp"
#include "tcc/config.hpp"
#include "tcc/objective.hpp"
#include "tcc/trainer.hpp"
#include "tcc/checkpoint.hpp"
#include "tcc/gradcheck.hpp"
