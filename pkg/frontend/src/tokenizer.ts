/**
 * Whole-word tokenizer for class names against a checkpoint vocabulary.
 *
 * Class labels in recognition benchmarks are short noun phrases, so a
 * word-level lookup is exact for fixture models and matches real CLIP BPE
 * vocabularies whenever each word exists as a single merged token (common
 * words carry a "</w>" end-of-word suffix there). Unknown words fail loudly
 * rather than silently degrading the export.
 */

export interface Vocab {
  ids: Record<string, number>;
}

export function tokenizeClassName(name: string, vocab: Vocab): number[] {
  const words = name
    .toLowerCase()
    .replace(/[_-]+/g, " ")
    .split(/\s+/)
    .filter((w) => w.length > 0);
  if (words.length === 0) throw new Error(`empty class name ${JSON.stringify(name)}`);
  const ids: number[] = [];
  for (const w of words) {
    const id = vocab.ids[`${w}</w>`] ?? vocab.ids[w];
    if (id === undefined) {
      throw new Error(`class name word ${JSON.stringify(w)} not in checkpoint vocabulary`);
    }
    ids.push(id);
  }
  return ids;
}
