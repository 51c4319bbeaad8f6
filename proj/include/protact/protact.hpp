#pragma once

#include "autograd.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "evaluation.hpp"
#include "features.hpp"
#include "hash.hpp"
#include "layers.hpp"
#include "lda.hpp"
#include "log.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "pipeline.hpp"
#include "preprocess.hpp"
#include "random.hpp"
#include "tagger.hpp"
#include "synth.hpp"
#include "text.hpp"
#include "train.hpp"
