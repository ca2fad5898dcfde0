#pragma once

#include "scfm/error.hpp"
#include "scfm/types.hpp"
#include "scfm/rng.hpp"
#include "scfm/model_core.hpp"
#include "scfm/generator.hpp"
#include "scfm/clustering.hpp"
#include "scfm/lasso.hpp"
#include "scfm/hungarian.hpp"
#include "scfm/recovery.hpp"
#include "scfm/auxiliary.hpp"
#include "scfm/em.hpp"
#include "scfm/eval.hpp"
#include "scfm/io.hpp"
#include "scfm/bench.hpp"
