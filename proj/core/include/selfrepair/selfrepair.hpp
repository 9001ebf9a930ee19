#pragma once

#include "selfrepair/attribution.hpp"
#include "selfrepair/component.hpp"
#include "selfrepair/config.hpp"
#include "selfrepair/corpus.hpp"
#include "selfrepair/errors.hpp"
#include "selfrepair/experiment.hpp"
#include "selfrepair/forward.hpp"
#include "selfrepair/identity.hpp"
#include "selfrepair/intervention.hpp"
#include "selfrepair/metrics.hpp"
#include "selfrepair/model.hpp"
#include "selfrepair/neurons.hpp"
#include "selfrepair/results.hpp"
#include "selfrepair/tensor_store.hpp"
#include "selfrepair/trace.hpp"
