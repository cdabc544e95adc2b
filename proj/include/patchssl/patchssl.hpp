#pragma once

#include "patchssl/core.hpp"
#include "patchssl/image.hpp"
#include "patchssl/tiling.hpp"
#include "patchssl/stain.hpp"
#include "patchssl/nn.hpp"
#include "patchssl/vit.hpp"
#include "patchssl/cnn.hpp"
#include "patchssl/checkpoint.hpp"
#include "patchssl/encoder.hpp"
#include "patchssl/ssl/augment.hpp"
#include "patchssl/ssl/losses.hpp"
#include "patchssl/ssl/heads.hpp"
#include "patchssl/ssl/pretrain.hpp"
#include "patchssl/mil.hpp"
#include "patchssl/eval/metrics.hpp"
#include "patchssl/eval/embeddings.hpp"
#include "patchssl/eval/knn.hpp"
#include "patchssl/eval/cv.hpp"
#include "patchssl/eval/probe.hpp"
#include "patchssl/eval/mil_cv.hpp"
#include "patchssl/vizattn.hpp"
#include "patchssl/synth.hpp"
#include "patchssl/config.hpp"
