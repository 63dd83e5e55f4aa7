#pragma once

// Convenience umbrella: the whole library.

#include "addlc/combo.hpp"
#include "addlc/config.hpp"
#include "addlc/container.hpp"
#include "addlc/core.hpp"
#include "addlc/dataset.hpp"
#include "addlc/experiment.hpp"
#include "addlc/kmeans.hpp"
#include "addlc/lc.hpp"
#include "addlc/metrics.hpp"
#include "addlc/model.hpp"
#include "addlc/schemes.hpp"
#include "addlc/sgd.hpp"
#include "addlc/svd.hpp"
#include "addlc/weight_store.hpp"
