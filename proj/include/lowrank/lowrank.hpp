#pragma once

#include <lowrank/core.hpp>
#include <lowrank/gradient.hpp>
#include <lowrank/harness.hpp>
#include <lowrank/linalg.hpp>
#include <lowrank/metric.hpp>
#include <lowrank/operators.hpp>
#include <lowrank/random.hpp>
#include <lowrank/solvers.hpp>
