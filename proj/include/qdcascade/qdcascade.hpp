#pragma once

#include "qdcascade/cascade.hpp"
#include "qdcascade/config.hpp"
#include "qdcascade/constants.hpp"
#include "qdcascade/correlation.hpp"
#include "qdcascade/error.hpp"
#include "qdcascade/fitting.hpp"
#include "qdcascade/lindblad.hpp"
#include "qdcascade/montecarlo.hpp"
#include "qdcascade/rng.hpp"
#include "qdcascade/svg.hpp"
#include "qdcascade/timetag.hpp"
