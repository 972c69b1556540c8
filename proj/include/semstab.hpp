#pragma once

#include "semstab/config.hpp"
#include "semstab/corpus.hpp"
#include "semstab/embed.hpp"
#include "semstab/error.hpp"
#include "semstab/harness.hpp"
#include "semstab/io.hpp"
#include "semstab/lbfgs.hpp"
#include "semstab/model.hpp"
#include "semstab/monitor.hpp"
#include "semstab/parallel.hpp"
#include "semstab/phrases.hpp"
#include "semstab/rng.hpp"
#include "semstab/select.hpp"
#include "semstab/shift.hpp"
#include "semstab/synthlab.hpp"
#include "semstab/timeutil.hpp"
#include "semstab/tokenize.hpp"
#include "semstab/vocab.hpp"
