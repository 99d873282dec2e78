# ttstar package
