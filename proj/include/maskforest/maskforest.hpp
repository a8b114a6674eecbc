#pragma once

// Umbrella header: the whole library.

#include "maskforest/common.hpp"
#include "maskforest/detrng.hpp"
#include "maskforest/entropy.hpp"
#include "maskforest/evaluation.hpp"
#include "maskforest/isoforest.hpp"
#include "maskforest/linalg.hpp"
#include "maskforest/message.hpp"
#include "maskforest/paillier.hpp"
#include "maskforest/protocol.hpp"
