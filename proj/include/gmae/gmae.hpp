#pragma once

#include "gmae/checkpoint.hpp"
#include "gmae/error.hpp"
#include "gmae/eval.hpp"
#include "gmae/gradcheck.hpp"
#include "gmae/graph.hpp"
#include "gmae/graphormer.hpp"
#include "gmae/io.hpp"
#include "gmae/log.hpp"
#include "gmae/memory.hpp"
#include "gmae/model.hpp"
#include "gmae/ops.hpp"
#include "gmae/optim.hpp"
#include "gmae/tensor.hpp"
#include "gmae/train.hpp"
