#pragma once

#include "mrnn/attention.hpp"
#include "mrnn/checkpoint.hpp"
#include "mrnn/config.hpp"
#include "mrnn/dataset.hpp"
#include "mrnn/diffcore.hpp"
#include "mrnn/embeddings.hpp"
#include "mrnn/evalrank.hpp"
#include "mrnn/heatmap.hpp"
#include "mrnn/model.hpp"
#include "mrnn/model_check.hpp"
#include "mrnn/ngram.hpp"
#include "mrnn/optimizer.hpp"
#include "mrnn/parallel.hpp"
#include "mrnn/pipeline.hpp"
#include "mrnn/training.hpp"
