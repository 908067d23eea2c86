#pragma once

#include "scaleood/core.hpp"
#include "scaleood/ingest.hpp"
#include "scaleood/ish.hpp"
#include "scaleood/metrics.hpp"
#include "scaleood/pipeline.hpp"
#include "scaleood/random.hpp"
#include "scaleood/scoring.hpp"
#include "scaleood/shaping.hpp"
#include "scaleood/synth.hpp"
#include "scaleood/theory.hpp"
#include "scaleood/types.hpp"
