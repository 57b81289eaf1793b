#pragma once

#include "pwa/aggregation.hpp"
#include "pwa/detector_selection.hpp"
#include "pwa/error.hpp"
#include "pwa/evaluation.hpp"
#include "pwa/pipeline.hpp"
#include "pwa/postprocess.hpp"
#include "pwa/retrieval.hpp"
#include "pwa/tensor.hpp"
#include "pwa/tensor_store.hpp"
