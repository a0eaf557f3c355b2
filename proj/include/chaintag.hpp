#pragma once

// Everything at once.

#include "chaintag/numerics.hpp"
#include "chaintag/label_set.hpp"
#include "chaintag/data.hpp"
#include "chaintag/evaluation.hpp"
#include "chaintag/embeddings.hpp"
#include "chaintag/encoder.hpp"
#include "chaintag/potentials.hpp"
#include "chaintag/chain.hpp"
#include "chaintag/chain_oracle.hpp"
#include "chaintag/model.hpp"
#include "chaintag/training.hpp"
#include "chaintag/gradcheck.hpp"
#include "chaintag/selftest.hpp"
