#pragma once

// Umbrella header: synthetic shortcut perturbations, poisoning regimes, and
// the measurement harness (probes, victim CNN, embeddings).

#include "shortcut/augment.hpp"
#include "shortcut/cnn.hpp"
#include "shortcut/dataset.hpp"
#include "shortcut/lbfgs.hpp"
#include "shortcut/loss.hpp"
#include "shortcut/matrix.hpp"
#include "shortcut/pertfile.hpp"
#include "shortcut/poison.hpp"
#include "shortcut/probe.hpp"
#include "shortcut/prng.hpp"
#include "shortcut/synth.hpp"
#include "shortcut/train.hpp"
#include "shortcut/tsne.hpp"
