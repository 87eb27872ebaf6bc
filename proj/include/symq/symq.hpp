#pragma once

#include "symq/bench.hpp"
#include "symq/datagen.hpp"
#include "symq/env.hpp"
#include "symq/errors.hpp"
#include "symq/expr.hpp"
#include "symq/infer.hpp"
#include "symq/model.hpp"
#include "symq/online.hpp"
#include "symq/opcodes.hpp"
#include "symq/parse.hpp"
#include "symq/points.hpp"
#include "symq/rng.hpp"
#include "symq/train.hpp"
