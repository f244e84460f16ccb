from marginal_synth.main import main

raise SystemExit(main())
