#include "textshift/toy_corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <string_view>
#include <vector>

#include "textshift/common.hpp"
#include "textshift/rng.hpp"

namespace textshift {

namespace {

struct Topic {
  std::string_view subject;
  std::array<std::string_view, 8> steps;
};

constexpr std::array<Topic, 8> kTopics{{
    {"giving yourself a tattoo",
     {"clean your workspace", "wear fresh gloves", "use new needles", "throw away the old ink",
      "disinfect every surface", "wash your hands with soap", "keep the skin covered", "check the needle depth"}},
    {"healing after surgery",
     {"tell your doctor about your medications", "stop taking aspirin", "rest for a few days",
      "keep the wound dry", "watch for swelling", "ask when to restart your pills", "avoid heavy lifting",
      "eat light meals"}},
    {"dealing with resentment",
     {"notice your feelings", "say no to extra favors", "talk to your sister", "write down what bothers you",
      "take an evening for yourself", "express your anger calmly", "set clear limits", "think about your plans"}},
    {"starting a vegetable garden",
     {"pick a sunny spot", "loosen the soil", "add some compost", "plant the seeds in rows", "water the beds daily",
      "pull the weeds", "put up a small fence", "harvest the tomatoes"}},
    {"baking bread at home",
     {"measure the flour", "warm the water", "mix in the yeast", "knead the dough", "let the dough rise",
      "shape the loaf", "heat the oven", "cool the bread on a rack"}},
    {"saving money each month",
     {"track your spending", "make a simple budget", "cancel unused subscriptions", "cook at home more",
      "set up automatic savings", "pay off the card", "compare prices before buying", "keep an emergency fund"}},
    {"training for a first race",
     {"buy good running shoes", "start with short runs", "stretch after each run", "add one long run a week",
      "drink enough water", "sleep well", "rest on sore days", "pace yourself on race day"}},
    {"studying for an exam",
     {"make a study schedule", "review your notes", "quiz yourself", "take short breaks", "join a study group",
      "put your phone away", "ask the teacher questions", "get a good night of sleep"}},
}};

constexpr std::array<std::string_view, 6> kHumanForms{
    "you might want to {}.", "just {}.", "try to {} if you can.", "it helps to {}.", "then {}.",
    "if you can, {} first.",
};

constexpr std::array<std::string_view, 6> kGptForms{
    "it is crucial to {} to ensure optimal results.",
    "additionally, ensure that you {} throughout the process.",
    "it is essential to {} in order to maintain a safe environment.",
    "furthermore, it is important to {} consistently.",
    "to optimize the process, {} thoroughly.",
    "prioritize the need to {} as a vital step.",
};

constexpr std::array<std::string_view, 3> kGptOpeners{
    "when it comes to {}, careful preparation is essential.",
    "{} requires a thoughtful and comprehensive approach.",
    "before {}, it is vital to consider several key factors.",
};

constexpr std::array<std::string_view, 3> kGptClosers{
    "by following these steps, you can ensure a smooth and successful experience.",
    "overall, prioritizing these practices will help you achieve the best possible outcome.",
    "ultimately, this approach promotes a healthy balance and lasting well-being.",
};

std::string fill(std::string_view form, std::string_view slot) {
  std::string out(form);
  const auto at = out.find("{}");
  out.replace(at, 2, slot);
  return out;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string sentence(Rng& rng, std::string_view step, bool formal) {
  return formal ? fill(kGptForms[rng.index(kGptForms.size())], step)
                : fill(kHumanForms[rng.index(kHumanForms.size())], step);
}

void append_sentence(std::string& paragraph, std::string s) {
  if (!paragraph.empty()) paragraph += ' ';
  paragraph += capitalize(std::move(s));
}

}  // namespace

Corpus make_toy_corpus(const ToyCorpusSpec& spec) {
  if (spec.per_class == 0) fail("toy corpus: per_class must be positive");
  if (spec.style_mix < 0 || spec.style_mix > 0.5) fail("toy corpus: style_mix must be in [0, 0.5]");
  Rng rng(derive_seed(spec.seed, "toy-corpus"));
  std::vector<TextSample> samples;
  samples.reserve(2 * spec.per_class);
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    const Topic& topic = kTopics[rng.index(kTopics.size())];
    std::array<std::size_t, 8> order{0, 1, 2, 3, 4, 5, 6, 7};
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t n_steps = 3 + rng.index(2);
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_steps));

    std::string human, gpt;
    if (!rng.bernoulli(spec.style_mix)) {
      append_sentence(gpt, fill(kGptOpeners[rng.index(kGptOpeners.size())], topic.subject));
    }
    for (std::size_t k = 0; k < n_steps; ++k) {
      const std::string_view step = topic.steps[order[k]];
      append_sentence(human, sentence(rng, step, rng.bernoulli(spec.style_mix)));
      append_sentence(gpt, sentence(rng, step, !rng.bernoulli(spec.style_mix)));
    }
    if (!rng.bernoulli(spec.style_mix)) {
      append_sentence(gpt, std::string(kGptClosers[rng.index(kGptClosers.size())]));
    }
    const std::string hid = spec.id_prefix + "-h" + std::to_string(i);
    samples.push_back({hid, human, Label::Human, std::nullopt});
    samples.push_back({spec.id_prefix + "-g" + std::to_string(i), gpt, Label::Gpt, hid});
  }
  return Corpus(std::move(samples));
}

}  // namespace textshift
