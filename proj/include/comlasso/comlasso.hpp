#pragma once
#include <comlasso/error.hpp>
#include <comlasso/loss.hpp>
#include <comlasso/problem.hpp>
#include <comlasso/path.hpp>
#include <comlasso/kkt.hpp>
#include <comlasso/path_solver.hpp>
#include <comlasso/oracle.hpp>
#include <comlasso/selection.hpp>
#include <comlasso/data_io.hpp>
