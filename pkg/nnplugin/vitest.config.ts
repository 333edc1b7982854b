import {defineConfig} from 'vitest/config';

export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
    // training and subprocess tests are long and CPU-bound; run files
    // sequentially in separate processes so timings stay honest and the
    // tf wasm state never leaks between files
    fileParallelism: false,
    pool: 'forks',
    testTimeout: 600_000,
    hookTimeout: 600_000,
  },
});
