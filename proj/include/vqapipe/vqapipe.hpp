#pragma once

#include "vqapipe/cache.hpp"
#include "vqapipe/captioning.hpp"
#include "vqapipe/decoding.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/exemplar.hpp"
#include "vqapipe/gateway.hpp"
#include "vqapipe/hash.hpp"
#include "vqapipe/http_gateway.hpp"
#include "vqapipe/manifest.hpp"
#include "vqapipe/pipeline.hpp"
#include "vqapipe/prompting.hpp"
#include "vqapipe/rng.hpp"
#include "vqapipe/vqa_eval.hpp"
