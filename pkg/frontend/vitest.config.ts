import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    testTimeout: 30_000,
    hookTimeout: 1_800_000, // the e2e hook may train reference checkpoints
  },
});
