# Coarse Guidance Toolkit - Test Package
