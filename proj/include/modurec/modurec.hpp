#pragma once

#include "modurec/autoencoder.hpp"
#include "modurec/checkpoint.hpp"
#include "modurec/common.hpp"
#include "modurec/dataio.hpp"
#include "modurec/eval.hpp"
#include "modurec/experiment.hpp"
#include "modurec/model.hpp"
#include "modurec/modulation.hpp"
#include "modurec/timefeat.hpp"
#include "modurec/training.hpp"
